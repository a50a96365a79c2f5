"""Differential classification against the solc baseline.

Each non-baseline toolchain is compared with the baseline in two stages:
compilation (EMI/CSI) and, when both sides compiled and can run,
execution (ESI/EOI). Per-toolchain comparison policies narrow what
counts for toolchains whose error reporting or runtime diverges by
design, and a pattern list marks documented differences as false
positives.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .types import (
    CompileOutcome,
    CompileStatus,
    ExecOutcome,
    InconsistencyClass,
    InconsistencyRecord,
    SeedProgram,
    ToolchainId,
    canonical_equal,
)

log = logging.getLogger(__name__)

BASELINE = "solc"
HIGH, LIMITED = "high", "limited"
DEFAULT_COMPAT = {"revive": HIGH, "zksolc": HIGH, "solar": HIGH, "solang": LIMITED, "sold": LIMITED}
CLASS_ORDER = [InconsistencyClass.EMI, InconsistencyClass.CSI, InconsistencyClass.ESI, InconsistencyClass.EOI]


@dataclass(frozen=True)
class ComparisonPolicy:
    toolchain: ToolchainId
    compat: str = HIGH
    csi_requires_unclear_error: bool = False
    esi_direction: str = "both"

    def __post_init__(self):
        if self.compat == HIGH:
            ok = not self.csi_requires_unclear_error and self.esi_direction == "both"
        elif self.compat == LIMITED:
            ok = self.csi_requires_unclear_error and self.esi_direction == "only_baseline_fails"
        else:
            raise ValueError(f"compat must be {HIGH!r} or {LIMITED!r}")
        if not ok:
            raise ValueError(f"{self.toolchain.name}: restriction flags inconsistent with compat={self.compat}")

    @classmethod
    def of(cls, toolchain: ToolchainId, compat: str) -> "ComparisonPolicy":
        if compat == LIMITED:
            return cls(toolchain, LIMITED, True, "only_baseline_fails")
        return cls(toolchain, HIGH, False, "both")


def default_policy(toolchain: ToolchainId, overrides: Optional[Mapping[str, str]] = None) -> ComparisonPolicy:
    compat = dict(DEFAULT_COMPAT, **(overrides or {})).get(toolchain.name, HIGH)
    return ComparisonPolicy.of(toolchain, compat)


# --------------------------------------------------------------------------
# false-positive patterns
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FpPattern:
    id: str
    toolchain: str
    kind: str
    pattern: str
    note: str
    applies_to: frozenset

    def __post_init__(self):
        object.__setattr__(self, "applies_to", frozenset(InconsistencyClass(c) for c in self.applies_to))
        if not self.applies_to:
            raise ValueError(f"pattern {self.id}: applies_to must be non-empty")
        if self.kind not in ("substring", "regex"):
            raise ValueError(f"pattern {self.id}: matcher must be substring or regex")
        if self.kind == "regex":
            try:
                re.compile(self.pattern)
            except re.error as e:
                raise ValueError(f"pattern {self.id}: bad regex: {e}") from e

    def matches(self, source: str) -> bool:
        if self.kind == "substring":
            return self.pattern in source
        return re.search(self.pattern, source, re.MULTILINE) is not None

    @classmethod
    def from_json(cls, d: dict) -> "FpPattern":
        m = d["matcher"]
        kind = "substring" if "substring" in m else "regex"
        return cls(d["id"], d["toolchain"], kind, m[kind], d.get("note", ""), frozenset(d["applies_to"]))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "toolchain": self.toolchain,
            "matcher": {self.kind: self.pattern},
            "note": self.note,
            "applies_to": sorted(c.value for c in self.applies_to),
        }


def default_fp_patterns_path() -> Path:
    return Path(str(resources.files("parityfuzz") / "data" / "fp_patterns.json"))


def load_fp_patterns(path=None) -> list:
    with open(path or default_fp_patterns_path(), encoding="utf-8") as fh:
        return [FpPattern.from_json(d) for d in json.load(fh)]


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


def _effective_clarity(o: CompileOutcome) -> CompileOutcome:
    # crashes and timeouts never count as clear errors
    if o.status in (CompileStatus.CRASH, CompileStatus.TIMEOUT) and o.clear_error:
        return replace(o, clear_error=False)
    return o


def _program(p) -> SeedProgram:
    return p if isinstance(p, SeedProgram) else SeedProgram.from_source(p)


def compare_compilation(
    baseline: CompileOutcome, other: CompileOutcome, policy: ComparisonPolicy, program
) -> Optional[InconsistencyRecord]:
    baseline, other = _effective_clarity(baseline), _effective_clarity(other)
    cls = None
    if not baseline.ok and not other.ok:
        if baseline.clear_error != other.clear_error:
            cls = InconsistencyClass.EMI
    elif baseline.ok != other.ok:
        other_failed = baseline.ok
        if not (policy.csi_requires_unclear_error and other_failed and other.clear_error):
            cls = InconsistencyClass.CSI
    if cls is None:
        return None
    return InconsistencyRecord(cls, baseline.toolchain, other.toolchain, _program(program), baseline, other)


def compare_execution(
    baseline: ExecOutcome, other: ExecOutcome, policy: ComparisonPolicy, program
) -> Optional[InconsistencyRecord]:
    cls = None
    if baseline.ok != other.ok:
        if not (policy.esi_direction == "only_baseline_fails" and baseline.ok):
            cls = InconsistencyClass.ESI
    elif baseline.ok:
        if baseline.decoded is None or other.decoded is None:
            log.info("%s vs %s: outputs not comparable (undecodable)", baseline.toolchain, other.toolchain)
        elif not canonical_equal(baseline.decoded, other.decoded):
            cls = InconsistencyClass.EOI
    if cls is None:
        return None
    return InconsistencyRecord(cls, baseline.toolchain, other.toolchain, _program(program), baseline, other)


def filter_false_positive(rec: InconsistencyRecord, patterns: Iterable[FpPattern]) -> InconsistencyRecord:
    for p in patterns:
        if p.toolchain == rec.other.name and rec.cls in p.applies_to and p.matches(rec.program.source):
            return replace(rec, fp_filtered=True)
    return rec


@dataclass(frozen=True)
class ToolchainResult:
    """One toolchain's outcomes for one program. ``execute`` is None when not run."""

    compile: CompileOutcome
    execute: Optional[ExecOutcome] = None
    supports: frozenset = frozenset(InconsistencyClass)


def detect_all(
    program,
    outcomes: Mapping[str, ToolchainResult],
    policies: Optional[Mapping[str, ComparisonPolicy]] = None,
    patterns: Sequence[FpPattern] = (),
    baseline: str = BASELINE,
) -> list:
    """Records for every non-baseline toolchain, ordered by toolchain then class."""
    if baseline not in outcomes:
        raise KeyError(f"baseline {baseline!r} outcomes missing")
    program = _program(program)
    base = outcomes[baseline]
    out, seen = [], set()
    for name in sorted(outcomes):
        if name == baseline:
            continue
        res = outcomes[name]
        policy = (policies or {}).get(name) or default_policy(res.compile.toolchain)
        recs = []
        c = compare_compilation(base.compile, res.compile, policy, program)
        if c is not None and c.cls in res.supports:
            recs.append(c)
        exec_classes = {InconsistencyClass.ESI, InconsistencyClass.EOI} & res.supports
        if base.compile.ok and res.compile.ok and base.execute is not None and res.execute is not None and exec_classes:
            e = compare_execution(base.execute, res.execute, policy, program)
            if e is not None and e.cls in res.supports:
                recs.append(e)
        for r in sorted(recs, key=lambda r: CLASS_ORDER.index(r.cls)):
            r = filter_false_positive(r, patterns)
            if r.dedup_key not in seen:
                seen.add(r.dedup_key)
                out.append(r)
    return out


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------


def unique_findings(records: Iterable[InconsistencyRecord], filtered: bool = False) -> list:
    """First record per dedup key, restricted to (un)filtered ones."""
    seen, out = set(), []
    for r in records:
        if r.fp_filtered != filtered or r.dedup_key in seen:
            continue
        seen.add(r.dedup_key)
        out.append(r)
    return out


def summary_matrix(records: Iterable[InconsistencyRecord], toolchains: Sequence[str] = ()) -> dict:
    """toolchain -> class -> count of unique unfiltered findings."""
    rows = {t: {c.value: 0 for c in CLASS_ORDER} for t in toolchains}
    for r in unique_findings(records):
        rows.setdefault(r.other.name, {c.value: 0 for c in CLASS_ORDER})[r.cls.value] += 1
    return dict(sorted(rows.items()))


def render_matrix(matrix: Mapping[str, Mapping[str, int]]) -> str:
    cols = [c.value for c in CLASS_ORDER]
    lines = ["| toolchain | " + " | ".join(cols) + " | total |", "|---" * (len(cols) + 2) + "|"]
    totals = {c: 0 for c in cols}
    for name, row in matrix.items():
        for c in cols:
            totals[c] += row.get(c, 0)
        lines.append(f"| {name} | " + " | ".join(str(row.get(c, 0)) for c in cols) + f" | {sum(row.values())} |")
    lines.append("| total | " + " | ".join(str(totals[c]) for c in cols) + f" | {sum(totals.values())} |")
    return "\n".join(lines)
