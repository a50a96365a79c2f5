"""Reward computation and rule-selection policies.

The reward scores one mutated variant from its detection results and,
failing that, from the change in baseline coverage. Policies pick a rule
within a feature group; the reference learner is a multiplicative-weights
bandit with epsilon-uniform exploration.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .llm import Adapter, TransportError
from .solidity import strip_comments
from .types import CoverageSnapshot, FeatureTag, InconsistencyRecord, MutationRule, SeedProgram

log = logging.getLogger(__name__)

DEFAULT_SCALE = 10.0


class UnknownRule(KeyError):
    pass


class EmptyGroup(LookupError):
    pass


class ProviderError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# reward
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardInput:
    records: tuple = ()
    baseline_compiled: bool = True
    cov_before: Optional[CoverageSnapshot] = None
    cov_after: Optional[CoverageSnapshot] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if (self.cov_before is None) != (self.cov_after is None):
            raise ValueError("coverage snapshots must be both present or both absent")


def _clamp(x: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return max(lo, min(hi, x))


def reward(inp: RewardInput, scale: float = DEFAULT_SCALE) -> float:
    """Score in [-1, 1]; the cases are checked in order."""
    recs: Sequence[InconsistencyRecord] = inp.records
    if any(not r.fp_filtered for r in recs):
        return 1.0
    if recs:
        return -1.0
    if not inp.baseline_compiled:
        return -1.0
    if inp.cov_before is None:
        return 0.0
    return _clamp((inp.cov_after.ratio - inp.cov_before.ratio) * scale)


# --------------------------------------------------------------------------
# selection policies
# --------------------------------------------------------------------------


def _rng(seed: Union[int, str, random.Random, None]) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


class SelectionPolicy:
    kind = "abstract"

    def select(self, feature: FeatureTag, program: SeedProgram, rules: Sequence[MutationRule], rng) -> MutationRule:
        raise NotImplementedError

    def update(self, feature: FeatureTag, rule_id: str, r: float) -> "SelectionPolicy":
        return self

    def to_json(self) -> dict:
        return {"kind": self.kind}


def _check_reward(r: float) -> float:
    if not (-1.0 <= r <= 1.0) or math.isnan(r):
        raise ValueError(f"reward {r!r} outside [-1, 1]")
    return float(r)


class BanditPolicy(SelectionPolicy):
    """Per-feature multiplicative-weights table with epsilon-uniform mixing.

    Weights within a group are kept normalized to sum 1 and never fall
    below ``floor``, so every rule keeps a non-zero selection probability
    even at epsilon 0.
    """

    kind = "bandit"

    def __init__(self, epsilon: float = 0.1, eta: float = 0.3, floor: float = 1e-6):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if eta < 0 or floor <= 0:
            raise ValueError("eta must be >= 0 and floor > 0")
        self.epsilon = epsilon
        self.eta = eta
        self.floor = floor
        self.weights: dict = {}
        self.updates = 0

    @classmethod
    def from_catalog(cls, catalog, **kw) -> "BanditPolicy":
        p = cls(**kw)
        for f in catalog.features:
            rules = catalog.rules_for(f)
            if rules:
                p.ensure_group(f, [r.id for r in rules])
        return p

    def ensure_group(self, feature: FeatureTag, rule_ids: Iterable[str]) -> None:
        """Register rules; newcomers join at the group's mean weight."""
        group = self.weights.setdefault(feature.name, {})
        new = [rid for rid in rule_ids if rid not in group]
        if not new:
            return
        base = (sum(group.values()) / len(group)) if group else 1.0
        for rid in new:
            group[rid] = base
        self._normalize(group)

    def _normalize(self, group: dict) -> None:
        total = sum(group.values())
        for k in group:
            group[k] = max(group[k] / total, self.floor)
        total = sum(group.values())
        for k in group:
            group[k] /= total

    def probabilities(self, feature: FeatureTag) -> dict:
        group = self.weights.get(feature.name)
        if not group:
            raise EmptyGroup(feature.name)
        n = len(group)
        total = sum(group.values())
        return {k: self.epsilon / n + (1 - self.epsilon) * w / total for k, w in sorted(group.items())}

    def sample(self, feature: FeatureTag, seed) -> str:
        group = self.weights.get(feature.name)
        if not group:
            raise EmptyGroup(feature.name)
        rng = _rng(seed)
        ids = sorted(group)
        if rng.random() < self.epsilon:
            return ids[rng.randrange(len(ids))]
        x = rng.random() * sum(group[i] for i in ids)
        acc = 0.0
        for i in ids:
            acc += group[i]
            if x < acc:
                return i
        return ids[-1]

    def select(self, feature, program, rules, rng) -> MutationRule:
        if not rules:
            raise EmptyGroup(feature.name)
        by_id = {r.id: r for r in rules}
        self.ensure_group(feature, by_id)
        rid = self.sample(feature, rng)
        if rid not in by_id:
            # table holds rules the catalog no longer has; restrict to live ones
            live = {k: v for k, v in self.weights[feature.name].items() if k in by_id}
            tmp = BanditPolicy(self.epsilon, self.eta, self.floor)
            tmp.weights = {feature.name: live}
            rid = tmp.sample(feature, rng)
        return by_id[rid]

    def update(self, feature: FeatureTag, rule_id: str, r: float) -> "BanditPolicy":
        r = _check_reward(r)
        group = self.weights.get(feature.name)
        if group is None or rule_id not in group:
            raise UnknownRule(f"{feature.name}/{rule_id}")
        group[rule_id] *= math.exp(self.eta * r)
        self._normalize(group)
        self.updates += 1
        return self

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "eta": self.eta,
            "floor": self.floor,
            "updates": self.updates,
            "weights": {f: dict(sorted(g.items())) for f, g in sorted(self.weights.items())},
        }

    @classmethod
    def from_json(cls, d: dict) -> "BanditPolicy":
        p = cls(float(d["epsilon"]), float(d["eta"]), float(d.get("floor", 1e-6)))
        p.weights = {f: {k: float(v) for k, v in g.items()} for f, g in d.get("weights", {}).items()}
        p.updates = int(d.get("updates", 0))
        return p


class UniformPolicy(SelectionPolicy):
    kind = "uniform"

    def select(self, feature, program, rules, rng) -> MutationRule:
        if not rules:
            raise EmptyGroup(feature.name)
        ordered = sorted(rules, key=lambda r: r.id)
        return ordered[_rng(rng).randrange(len(ordered))]


class LLMPolicy(SelectionPolicy):
    """Delegates the choice to a (possibly externally fine-tuned) model.

    Local updates are no-ops: training happens elsewhere. An unusable
    answer falls back to a uniform pick.
    """

    kind = "llm"

    def __init__(self, adapter: Adapter):
        self.adapter = adapter
        self.fallbacks = 0

    def select(self, feature, program, rules, rng) -> MutationRule:
        if not rules:
            raise EmptyGroup(feature.name)
        ordered = sorted(rules, key=lambda r: r.id)
        if len(ordered) == 1:
            return ordered[0]
        listing = "\n".join(f"{r.id}: {r.action}: {r.description}" for r in ordered)
        req = self.adapter.request("rule_select", program=program.source, feature=feature.name, rules=listing)
        try:
            chosen = self.adapter.complete(req).parsed
        except TransportError as e:
            log.warning("rule_select transport failure: %s", e)
            chosen = None
        for r in ordered:
            if r.id == chosen:
                return r
        self.fallbacks += 1
        log.warning("rule_select gave no usable id for %s; picking uniformly", feature)
        return ordered[_rng(rng).randrange(len(ordered))]


def policy_from_config(cfg: dict, catalog, adapter: Optional[Adapter] = None) -> SelectionPolicy:
    kind = cfg.get("kind", "bandit")
    if kind == "bandit":
        return BanditPolicy.from_catalog(
            catalog,
            epsilon=float(cfg.get("epsilon", 0.1)),
            eta=float(cfg.get("eta", 0.3)),
            floor=float(cfg.get("floor", 1e-6)),
        )
    if kind == "uniform":
        return UniformPolicy()
    if kind == "llm":
        if adapter is None:
            raise ValueError("llm policy needs a rule_select adapter")
        return LLMPolicy(adapter)
    raise ValueError(f"unknown policy kind {kind!r}")


def save_checkpoint(policy: SelectionPolicy, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(policy.to_json(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(path) -> BanditPolicy:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("kind") != "bandit":
        raise ValueError(f"checkpoint kind {d.get('kind')!r} is not resumable")
    return BanditPolicy.from_json(d)


# --------------------------------------------------------------------------
# coverage
# --------------------------------------------------------------------------


class CoverageProvider:
    kind = "abstract"

    def __call__(self, program: SeedProgram) -> Optional[CoverageSnapshot]:
        raise NotImplementedError


class NullCoverage(CoverageProvider):
    kind = "null"

    def __call__(self, program):
        return None


# Distinct syntactic construct kinds; coverage is how many of them a program uses.
_PROXY_KINDS = {
    **{
        f"kw:{k}": rf"\b{k}\b"
        for k in (
            "pragma contract interface library abstract struct enum mapping function modifier event error "
            "constructor fallback receive returns return public private internal external pure view payable "
            "memory storage calldata constant immutable assembly if else for while do break continue new delete "
            "emit revert require assert unchecked try catch type is using import override virtual"
        ).split()
    },
    "ty:uint": r"\buint\d*\b",
    "ty:int": r"\bint\d*\b",
    "ty:bytesN": r"\bbytes([1-9]|[12]\d|3[0-2])\b",
    "ty:bytes": r"\bbytes\b",
    "ty:string": r"\bstring\b",
    "ty:bool": r"\bbool\b",
    "ty:address": r"\baddress\b",
    "ty:dynarray": r"\w\[\]",
    "sq:indexed": r"\w\[\d+\]",
    "mem:push": r"\.push\s*\(",
    "mem:pop": r"\.pop\s*\(",
    "mem:length": r"\.length\b",
    "mem:slot": r"\.slot\b",
    "mem:offset": r"\.offset\b",
    "mem:selector": r"\.selector\b",
    "call:delegatecall": r"\.delegatecall\b",
    "call:call": r"\.call\b",
    "call:staticcall": r"\.staticcall\b",
    "call:abi": r"\babi\.\w+",
    "op:arrow": r"=>",
    "op:assign_yul": r":=",
    "op:eq": r"==",
    "op:ne": r"!=",
    "op:cmp": r"<=|>=|(?<![<>=])[<>](?![<>=])",
    "op:logic": r"&&|\|\|",
    "op:incdec": r"\+\+|--",
    "op:compound": r"[+\-*/%|&^]=",
    "op:shift": r"<<|>>",
    "op:arith": r"(?<![+\-*/=<>!&|^%:])[+\-*/%](?![+\-*/=])",
    "op:ternary": r"\?",
    "lit:number": r"\b\d+\b",
    "lit:hex": r"\b0x[0-9a-fA-F]+\b",
    "lit:string": r"\"[^\"\n]*\"|'[^'\n]*'",
    "lit:bool": r"\b(true|false)\b",
}
_PROXY_RES = {k: re.compile(v) for k, v in _PROXY_KINDS.items()}


class ProxyCoverage(CoverageProvider):
    """Counts which of a fixed set of construct kinds appear in the source."""

    kind = "proxy"

    def kinds(self, source: str) -> set:
        clean = strip_comments(source)
        return {k for k, rx in _PROXY_RES.items() if rx.search(clean)}

    def __call__(self, program):
        return CoverageSnapshot(len(self.kinds(program.source)), len(_PROXY_RES))


_SUMMARY_RE = re.compile(r"(\d+)\s+of\s+(\d+)")


class ExternalCoverage(CoverageProvider):
    """Runs an instrumented baseline compiler and parses its coverage summary.

    ``cmd`` is an argv template with ``{input}`` and ``{summary}``. The
    summary file is either JSON ``{"covered": n, "total": m}`` or text
    containing ``<n> of <m>`` (lcov's ``--summary`` line format).
    """

    kind = "external"

    def __init__(self, cmd: Sequence[str], timeout_s: float = 60.0):
        self.cmd = list(cmd)
        self.timeout_s = timeout_s

    def __call__(self, program):
        with tempfile.TemporaryDirectory(prefix="pf-cov-") as d:
            src = Path(d) / "program.sol"
            summary = Path(d) / "summary"
            src.write_text(program.source, encoding="utf-8")
            argv = [a.replace("{input}", str(src)).replace("{summary}", str(summary)) for a in self.cmd]
            try:
                subprocess.run(argv, cwd=d, capture_output=True, timeout=self.timeout_s, check=False)
                text = summary.read_text(encoding="utf-8")
            except (OSError, subprocess.TimeoutExpired) as e:
                raise ProviderError(f"coverage run failed: {e}") from e
        return parse_coverage_summary(text)


def parse_coverage_summary(text: str) -> CoverageSnapshot:
    try:
        d = json.loads(text)
        return CoverageSnapshot(int(d["covered"]), int(d["total"]))
    except (ValueError, KeyError, TypeError):
        pass
    m = _SUMMARY_RE.search(text)
    if not m:
        raise ProviderError("no coverage figures in summary")
    try:
        return CoverageSnapshot(int(m.group(1)), int(m.group(2)))
    except ValueError as e:
        raise ProviderError(str(e)) from e


def coverage_from_config(cfg: Optional[dict]) -> CoverageProvider:
    cfg = cfg or {"kind": "null"}
    kind = cfg.get("kind", "null")
    if kind == "null":
        return NullCoverage()
    if kind == "proxy":
        return ProxyCoverage()
    if kind == "external":
        return ExternalCoverage(cfg["cmd"], float(cfg.get("timeout_s", 60.0)))
    raise ValueError(f"unknown coverage provider {kind!r}")


@dataclass
class CoverageCache:
    """Memoizes snapshots by program id; provider failures read as absent."""

    provider: CoverageProvider
    _cache: dict = field(default_factory=dict)

    def get(self, program: SeedProgram) -> Optional[CoverageSnapshot]:
        if program.id not in self._cache:
            try:
                self._cache[program.id] = self.provider(program)
            except ProviderError as e:
                log.warning("coverage unavailable for %s: %s", program.id, e)
                self._cache[program.id] = None
        return self._cache[program.id]
