"""Shared domain types and the canonical value model.

Every object here is immutable once built so it can be handed between
worker threads without copying.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

ACTIONS = ("insert", "increase", "replace", "modify", "clear")
TOOLCHAIN_NAMES = ("solc", "revive", "zksolc", "solang", "sold", "solar")


class RuleKind(str, Enum):
    SYNTAX = "syntax_oriented"
    BOUNDARY = "boundary_oriented"


class TriggerKind(str, Enum):
    ERROR_HANDLING = "error_handling"
    UNIMPLEMENTED = "unimplemented"
    VALIDITY_CHECK = "validity_check"
    ASSERTION = "assertion"
    IMPLICIT = "implicit"


class CompileStatus(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TIMEOUT = "timeout"
    CRASH = "crash"


class ExecStatus(str, Enum):
    SUCCESS = "success"
    REVERT = "revert"
    FAILURE = "failure"
    TIMEOUT = "timeout"


class InconsistencyClass(str, Enum):
    EMI = "EMI"
    CSI = "CSI"
    ESI = "ESI"
    EOI = "EOI"


# --------------------------------------------------------------------------
# Canonical values
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UInt:
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("UInt must be non-negative")


@dataclass(frozen=True)
class Int:
    value: int


@dataclass(frozen=True)
class Bool:
    value: bool


@dataclass(frozen=True)
class Bytes:
    value: bytes


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Address:
    value: bytes

    def __post_init__(self):
        if len(self.value) != 20:
            raise ValueError(f"Address must be 20 bytes, got {len(self.value)}")


@dataclass(frozen=True)
class Tuple:
    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))


@dataclass(frozen=True)
class Array:
    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))


CanonicalValue = Union[UInt, Int, Bool, Bytes, Str, Address, Tuple, Array]
_SCALARS = (UInt, Int, Bool, Bytes, Str, Address)


def canonical_equal(a: CanonicalValue, b: CanonicalValue) -> bool:
    """Deep structural equality.

    UInt and Int never compare equal to each other, even at the same
    magnitude: the decoder picks the kind from the declared type, so a
    mismatch is a real type-level divergence.
    """
    if type(a) is not type(b):
        return False
    if isinstance(a, (Tuple, Array)):
        if len(a.items) != len(b.items):
            return False
        return all(canonical_equal(x, y) for x, y in zip(a.items, b.items))
    if isinstance(a, Bool):
        return bool(a.value) == bool(b.value)
    return a.value == b.value


def value_shape(v: CanonicalValue) -> str:
    """Type skeleton of a value, e.g. ``Tuple(UInt,Array[2](Bool))``."""
    if isinstance(v, Tuple):
        return "Tuple(" + ",".join(value_shape(x) for x in v.items) + ")"
    if isinstance(v, Array):
        return f"Array[{len(v.items)}](" + ",".join(sorted({value_shape(x) for x in v.items})) + ")"
    return type(v).__name__


def value_to_json(v: CanonicalValue) -> dict:
    if isinstance(v, (Tuple, Array)):
        return {"kind": type(v).__name__, "items": [value_to_json(x) for x in v.items]}
    if isinstance(v, (Bytes, Address)):
        return {"kind": type(v).__name__, "value": "0x" + v.value.hex()}
    if isinstance(v, (UInt, Int)):
        # JSON numbers lose precision past 2**53
        return {"kind": type(v).__name__, "value": str(v.value)}
    return {"kind": type(v).__name__, "value": v.value}


def value_from_json(d: dict) -> CanonicalValue:
    kind = d["kind"]
    if kind == "Tuple":
        return Tuple(tuple(value_from_json(x) for x in d["items"]))
    if kind == "Array":
        return Array(tuple(value_from_json(x) for x in d["items"]))
    if kind == "UInt":
        return UInt(int(d["value"]))
    if kind == "Int":
        return Int(int(d["value"]))
    if kind == "Bool":
        return Bool(bool(d["value"]))
    if kind == "Str":
        return Str(d["value"])
    if kind == "Bytes":
        return Bytes(_unhex(d["value"]))
    if kind == "Address":
        return Address(_unhex(d["value"]))
    raise ValueError(f"unknown value kind {kind!r}")


def _hex(b: Optional[bytes]) -> Optional[str]:
    return None if b is None else "0x" + b.hex()


def _unhex(s: Optional[str]) -> Optional[bytes]:
    if s is None:
        return None
    return bytes.fromhex(s[2:] if s.startswith("0x") else s)


# --------------------------------------------------------------------------
# Programs, rules, boundary conditions
# --------------------------------------------------------------------------

_FEATURE_RE = re.compile(r"^[a-z0-9][a-z0-9 _\-/().]*$")


@dataclass(frozen=True, order=True)
class FeatureTag:
    name: str

    def __post_init__(self):
        if not self.name or not _FEATURE_RE.match(self.name):
            raise ValueError(f"invalid feature tag {self.name!r}")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class CoverageSnapshot:
    covered: int
    total: int

    def __post_init__(self):
        if self.total < 0 or not 0 <= self.covered <= self.total:
            raise ValueError(f"bad coverage counts {self.covered}/{self.total}")

    @property
    def ratio(self) -> float:
        return self.covered / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {"covered": self.covered, "total": self.total, "ratio": self.ratio}

    @classmethod
    def from_json(cls, d: dict) -> "CoverageSnapshot":
        return cls(int(d["covered"]), int(d["total"]))


@dataclass(frozen=True)
class Entry:
    contract: str
    function: str


@dataclass(frozen=True)
class SeedProgram:
    id: str
    source: str
    parent_id: Optional[str] = None
    features: frozenset = frozenset()
    coverage: Optional[CoverageSnapshot] = None
    entry: Optional[Entry] = None

    def __post_init__(self):
        if not self.source:
            raise ValueError("program source must be non-empty")
        object.__setattr__(self, "features", frozenset(self.features))

    @staticmethod
    def make_id(source: str) -> str:
        return hashlib.sha256(source.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_source(cls, source: str, **kw) -> "SeedProgram":
        return cls(id=cls.make_id(source), source=source, **kw)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "parent_id": self.parent_id,
            "features": sorted(f.name for f in self.features),
            "coverage": self.coverage.to_json() if self.coverage else None,
            "entry": [self.entry.contract, self.entry.function] if self.entry else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SeedProgram":
        return cls(
            id=d["id"],
            source=d["source"],
            parent_id=d.get("parent_id"),
            features=frozenset(FeatureTag(f) for f in d.get("features", ())),
            coverage=CoverageSnapshot.from_json(d["coverage"]) if d.get("coverage") else None,
            entry=Entry(*d["entry"]) if d.get("entry") else None,
        )


def make_rule_id(kind: "RuleKind", feature: str, action: str, description: str, origin: str = "") -> str:
    """Content-derived rule id: ``SO-`` or ``BO-`` plus a short digest."""
    kind = RuleKind(kind)
    norm = " ".join(description.lower().split())
    h = hashlib.sha256(f"{kind.value}|{feature}|{action}|{norm}|{origin}".encode()).hexdigest()[:10]
    return f"{'SO' if kind is RuleKind.SYNTAX else 'BO'}-{h}"


@dataclass(frozen=True)
class MutationRule:
    id: str
    kind: RuleKind
    feature: FeatureTag
    action: str
    description: str
    origin: str = "generated"

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"action {self.action!r} not in {ACTIONS}")
        object.__setattr__(self, "kind", RuleKind(self.kind))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "feature": self.feature.name,
            "action": self.action,
            "description": self.description,
            "origin": self.origin,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MutationRule":
        return cls(
            id=d["id"],
            kind=RuleKind(d["kind"]),
            feature=FeatureTag(d["feature"]),
            action=d["action"],
            description=d["description"],
            origin=d.get("origin", "generated"),
        )


@dataclass(frozen=True)
class BoundaryCondition:
    id: str
    source_path: str
    snippet: str
    trigger_kind: TriggerKind
    identifiers_hit: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "trigger_kind", TriggerKind(self.trigger_kind))
        object.__setattr__(self, "identifiers_hit", tuple(self.identifiers_hit))
        if not self.snippet:
            raise ValueError("boundary snippet must be non-empty")
        if (self.trigger_kind is TriggerKind.IMPLICIT) != (not self.identifiers_hit):
            raise ValueError("trigger_kind=implicit iff identifiers_hit is empty")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source_path": self.source_path,
            "snippet": self.snippet,
            "trigger_kind": self.trigger_kind.value,
            "identifiers_hit": list(self.identifiers_hit),
        }

    @classmethod
    def from_json(cls, d: dict) -> "BoundaryCondition":
        return cls(
            id=d["id"],
            source_path=d["source_path"],
            snippet=d["snippet"],
            trigger_kind=TriggerKind(d["trigger_kind"]),
            identifiers_hit=tuple(d.get("identifiers_hit", ())),
        )


# --------------------------------------------------------------------------
# Toolchain outcomes
# --------------------------------------------------------------------------

_MOCK_NAME_RE = re.compile(r"^mock:[\w.\-]+$")


@dataclass(frozen=True)
class ToolchainId:
    name: str
    version: str = ""

    def __post_init__(self):
        if self.name not in TOOLCHAIN_NAMES and not _MOCK_NAME_RE.match(self.name):
            raise ValueError(f"unknown toolchain name {self.name!r}")

    def __str__(self):
        return f"{self.name}@{self.version}" if self.version else self.name

    def to_json(self) -> dict:
        return {"name": self.name, "version": self.version}

    @classmethod
    def from_json(cls, d: dict) -> "ToolchainId":
        return cls(d["name"], d.get("version", ""))


@dataclass(frozen=True)
class CompileOutcome:
    toolchain: ToolchainId
    status: CompileStatus
    bytecode: Optional[bytes] = None
    stderr: str = ""
    clear_error: bool = False
    duration_ms: int = 0
    # raw ABI JSON text when the compiler emits one; feeds return-type inference
    abi: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "status", CompileStatus(self.status))
        if self.status is CompileStatus.SUCCESS:
            if not self.bytecode:
                raise ValueError("successful compile must carry non-empty bytecode")
        elif self.bytecode is not None:
            raise ValueError("failed compile must not carry bytecode")
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be non-negative")

    @property
    def ok(self) -> bool:
        return self.status is CompileStatus.SUCCESS

    def to_json(self) -> dict:
        return {
            "kind": "compile",
            "toolchain": self.toolchain.to_json(),
            "status": self.status.value,
            "bytecode": _hex(self.bytecode),
            "stderr": self.stderr,
            "clear_error": self.clear_error,
            "duration_ms": self.duration_ms,
            "abi": self.abi,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CompileOutcome":
        return cls(
            toolchain=ToolchainId.from_json(d["toolchain"]),
            status=CompileStatus(d["status"]),
            bytecode=_unhex(d.get("bytecode")),
            stderr=d.get("stderr", ""),
            clear_error=bool(d.get("clear_error", False)),
            duration_ms=int(d.get("duration_ms", 0)),
            abi=d.get("abi"),
        )


@dataclass(frozen=True)
class ExecOutcome:
    toolchain: ToolchainId
    status: ExecStatus
    raw_output: Optional[bytes] = None
    decoded: Optional[CanonicalValue] = None
    stderr: str = ""
    duration_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "status", ExecStatus(self.status))
        if self.status is ExecStatus.SUCCESS and self.raw_output is None:
            raise ValueError("successful execution must carry raw_output")
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be non-negative")

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.SUCCESS

    def to_json(self) -> dict:
        return {
            "kind": "execute",
            "toolchain": self.toolchain.to_json(),
            "status": self.status.value,
            "raw_output": _hex(self.raw_output),
            "decoded": value_to_json(self.decoded) if self.decoded is not None else None,
            "stderr": self.stderr,
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ExecOutcome":
        return cls(
            toolchain=ToolchainId.from_json(d["toolchain"]),
            status=ExecStatus(d["status"]),
            raw_output=_unhex(d.get("raw_output")),
            decoded=value_from_json(d["decoded"]) if d.get("decoded") else None,
            stderr=d.get("stderr", ""),
            duration_ms=int(d.get("duration_ms", 0)),
        )


Outcome = Union[CompileOutcome, ExecOutcome]


def outcome_from_json(d: dict) -> Outcome:
    return CompileOutcome.from_json(d) if d.get("kind") == "compile" else ExecOutcome.from_json(d)


# --------------------------------------------------------------------------
# Findings
# --------------------------------------------------------------------------


class InvalidRecord(ValueError):
    pass


def check_class_invariant(cls: InconsistencyClass, base: Outcome, other: Outcome) -> None:
    """Raise InvalidRecord unless ``cls`` is legal for this outcome pair."""
    cls = InconsistencyClass(cls)
    if cls in (InconsistencyClass.EMI, InconsistencyClass.CSI):
        if not (isinstance(base, CompileOutcome) and isinstance(other, CompileOutcome)):
            raise InvalidRecord(f"{cls.value} needs a pair of compile outcomes")
        if cls is InconsistencyClass.EMI:
            if base.ok or other.ok or base.clear_error == other.clear_error:
                raise InvalidRecord("EMI needs two failures with differing clarity")
        elif base.ok == other.ok:
            raise InvalidRecord("CSI needs exactly one successful compile")
        return
    if not (isinstance(base, ExecOutcome) and isinstance(other, ExecOutcome)):
        raise InvalidRecord(f"{cls.value} needs a pair of exec outcomes")
    if cls is InconsistencyClass.ESI:
        if base.ok == other.ok:
            raise InvalidRecord("ESI needs exactly one successful execution")
        return
    if not (base.ok and other.ok):
        raise InvalidRecord("EOI needs two successful executions")
    if base.decoded is None or other.decoded is None:
        raise InvalidRecord("EOI needs both outputs decoded")
    if canonical_equal(base.decoded, other.decoded):
        raise InvalidRecord("EOI needs unequal decoded outputs")


_HEX_RE = re.compile(r"0x[0-9a-fA-F]+")
_PATH_RE = re.compile(r"(?:[A-Za-z]:)?(?:[\w.\-]*/)+[\w.\-]+|[\w\-]+\.(?:sol|rs|cpp|hpp|h|c|d|yul)\b")
_NUM_RE = re.compile(r"\b\d+\b")


def strip_discriminator(text: str) -> str:
    """First line of ``text`` with paths, numbers and hex blobs rewritten."""
    line = ""
    for candidate in text.splitlines():
        if candidate.strip():
            line = candidate.strip()
            break
    line = _HEX_RE.sub("<hex>", line)
    line = _PATH_RE.sub("<path>", line)
    line = _NUM_RE.sub("<n>", line)
    return " ".join(line.split())


@dataclass(frozen=True)
class InconsistencyRecord:
    cls: InconsistencyClass
    baseline: ToolchainId
    other: ToolchainId
    program: SeedProgram
    baseline_outcome: Outcome
    other_outcome: Outcome
    fp_filtered: bool = False
    id: str = field(default="")
    dedup_key: str = field(default="")

    def __post_init__(self):
        object.__setattr__(self, "cls", InconsistencyClass(self.cls))
        check_class_invariant(self.cls, self.baseline_outcome, self.other_outcome)
        if not self.dedup_key:
            object.__setattr__(self, "dedup_key", dedup_key(self))
        if not self.id:
            object.__setattr__(self, "id", self._content_hash())

    def _content_hash(self) -> str:
        payload = {
            "class": self.cls.value,
            "baseline": self.baseline.to_json(),
            "other": self.other.to_json(),
            "program": self.program.source,
            "baseline_outcome": _stable_outcome(self.baseline_outcome),
            "other_outcome": _stable_outcome(self.other_outcome),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "class": self.cls.value,
            "baseline": self.baseline.to_json(),
            "other": self.other.to_json(),
            "program": self.program.to_json(),
            "baseline_outcome": self.baseline_outcome.to_json(),
            "other_outcome": self.other_outcome.to_json(),
            "fp_filtered": self.fp_filtered,
            "dedup_key": self.dedup_key,
        }

    @classmethod
    def from_json(cls, d: dict) -> "InconsistencyRecord":
        return cls(
            cls=InconsistencyClass(d["class"]),
            baseline=ToolchainId.from_json(d["baseline"]),
            other=ToolchainId.from_json(d["other"]),
            program=SeedProgram.from_json(d["program"]),
            baseline_outcome=outcome_from_json(d["baseline_outcome"]),
            other_outcome=outcome_from_json(d["other_outcome"]),
            fp_filtered=bool(d.get("fp_filtered", False)),
            id=d.get("id", ""),
            dedup_key=d.get("dedup_key", ""),
        )


def _stable_outcome(o: Outcome) -> dict:
    # durations vary run to run and must not perturb the content hash
    d = o.to_json()
    d.pop("duration_ms", None)
    return d


def dedup_key(rec: InconsistencyRecord) -> str:
    """Stable grouping key: class, both toolchain names and a normalized discriminator."""
    base, other = rec.baseline_outcome, rec.other_outcome
    if rec.cls is InconsistencyClass.EMI:
        vague = base if not base.clear_error else other
        disc = f"{vague.status.value}:{strip_discriminator(vague.stderr)}"
    elif rec.cls is InconsistencyClass.CSI:
        failing = other if base.ok else base
        disc = f"{failing.status.value}:{strip_discriminator(failing.stderr)}"
    elif rec.cls is InconsistencyClass.ESI:
        failing = other if base.ok else base
        disc = f"{failing.status.value}:{strip_discriminator(failing.stderr)}"
    else:
        disc = f"{value_shape(base.decoded)}~{value_shape(other.decoded)}"
    return "|".join((rec.cls.value, rec.baseline.name, rec.other.name, disc))
