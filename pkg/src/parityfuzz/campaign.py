"""Fuzzing campaign: corpus in, findings out.

One iteration picks a seed, selects a feature and rule, mutates, repairs
against the baseline, compiles and runs the variant on every toolchain,
classifies inconsistencies, scores the variant and updates the policy.
Mutation and per-toolchain work run on thread pools; everything that
touches campaign state (policy update, corpus admission, logs) happens
in a single commit step, in iteration order, so a fixed seed against
deterministic toolchains and model fixtures yields a byte-identical
event log.

State directory layout::

    meta.json        run metadata (coverage provider, reward scale, registry path)
    corpus.jsonl     corpus index, seeds first, then admitted variants
    events.jsonl     one record per iteration
    findings.jsonl   every record, filtered ones included; append-only
    policy.json      bandit checkpoint
    artifacts/<id>/  program.sol, record.json and retained workspaces
"""

from __future__ import annotations

import json
import logging
import random
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import codec, solidity
from .llm import Adapter, TransportError, adapters_from_config
from .mutator import DEFAULT_REPAIR_ROUNDS, mutate, repair, select_feature, select_rule
from .oracle import (
    CLASS_ORDER,
    ComparisonPolicy,
    ToolchainResult,
    default_policy,
    detect_all,
    load_fp_patterns,
    render_matrix,
    summary_matrix,
    unique_findings,
)
from .policy import (
    DEFAULT_SCALE,
    BanditPolicy,
    CoverageCache,
    RewardInput,
    coverage_from_config,
    load_checkpoint,
    policy_from_config,
    reward,
    save_checkpoint,
)
from .rulegen import RuleCatalog, load_catalog
from .toolchain import AdapterError, PreconditionError, SubprocessToolchain, Toolchain, build_adapters, load_specs
from .types import CompileOutcome, InconsistencyClass, InconsistencyRecord, SeedProgram

log = logging.getLogger(__name__)

EXEC_CLASSES = frozenset({InconsistencyClass.ESI, InconsistencyClass.EOI})


class ConfigError(ValueError):
    pass


class CorpusError(ValueError):
    pass


class MissingArtifact(LookupError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class CampaignConfig:
    corpus_dir: Path
    catalog_path: Path
    state_dir: Path
    seed: int
    llm: dict = field(default_factory=dict)
    toolchain_registry_path: Optional[Path] = None
    fp_patterns_path: Optional[Path] = None
    policy: dict = field(default_factory=lambda: {"kind": "bandit", "epsilon": 0.1, "eta": 0.3})
    policy_checkpoint: Optional[Path] = None
    checkpoint_every: int = 50
    timeouts: dict = field(default_factory=dict)
    max_iterations: int = 100
    wall_clock_s: Optional[float] = None
    workers: int = 4
    batch: int = 1
    baseline: str = "solc"
    toolchains: Optional[list] = None
    compat: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=lambda: {"kind": "null"})
    reward_scale: float = DEFAULT_SCALE
    repair_rounds: int = DEFAULT_REPAIR_ROUNDS
    base_dir: Path = field(default_factory=Path.cwd)

    _PATHS = ("corpus_dir", "catalog_path", "state_dir", "toolchain_registry_path", "fp_patterns_path", "policy_checkpoint")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Optional[Path] = None) -> "CampaignConfig":
        d = dict(d)
        base = Path(base_dir or d.pop("base_dir", None) or Path.cwd())
        d.pop("base_dir", None)
        if d.get("seed") is None:
            raise ConfigError("config must set an integer 'seed'")
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for key in cls._PATHS:
            if d.get(key) is not None:
                p = Path(d[key])
                d[key] = p if p.is_absolute() else base / p
        d.setdefault("state_dir", base / "parityfuzz-state")
        for key in ("corpus_dir", "catalog_path"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        try:
            d["seed"] = int(d["seed"])
        except (TypeError, ValueError) as e:
            raise ConfigError("seed must be an integer") from e
        return cls(base_dir=base, **d)

    @classmethod
    def from_file(cls, path) -> "CampaignConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d, base_dir=path.resolve().parent)

    def validate(self) -> None:
        for key in self._PATHS:
            p = getattr(self, key)
            if key != "state_dir" and p is not None and not Path(p).exists():
                raise ConfigError(f"{key}: {p} does not exist")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.toolchains is not None and self.baseline not in self.toolchains:
            raise ConfigError(f"toolchain subset must include the baseline {self.baseline!r}")

    def summary(self) -> dict:
        d = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            if k == "base_dir":
                continue
            d[k] = str(v) if isinstance(v, Path) else v
        return d


# --------------------------------------------------------------------------
# corpus
# --------------------------------------------------------------------------


@dataclass
class CorpusEntry:
    program: SeedProgram
    origin: str  # "seed" or "variant"
    compiles: bool
    dedup_keys: tuple = ()
    path: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "program": self.program.to_json(),
            "origin": self.origin,
            "compiles": self.compiles,
            "dedup_keys": list(self.dedup_keys),
            "path": self.path,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CorpusEntry":
        return cls(SeedProgram.from_json(d["program"]), d["origin"], bool(d["compiles"]), tuple(d["dedup_keys"]), d.get("path"))


def ingest_corpus(directory, warnings: Optional[list] = None) -> list:
    """Every ``*.sol`` file under ``directory`` as a seed, sorted by path.

    Unreadable or non-UTF-8 files are skipped with a warning. Files with
    identical contents collapse into one seed.
    """
    root = Path(directory)
    if not root.is_dir():
        raise CorpusError(f"corpus directory {root} not found")
    warnings = warnings if warnings is not None else []
    seen, out = set(), []
    for path in sorted(root.rglob("*.sol")):
        try:
            src = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            warnings.append(f"skipping {path.name}: {e.__class__.__name__}")
            log.warning("skipping %s: %s", path, e)
            continue
        if not src.strip():
            warnings.append(f"skipping {path.name}: empty")
            continue
        prog = SeedProgram.from_source(src, entry=solidity.infer_entry(src))
        if prog.id in seen:
            continue
        seen.add(prog.id)
        out.append((path.relative_to(root).as_posix(), prog))
    if not out:
        raise CorpusError(f"corpus directory {root} contains no usable .sol files")
    return out


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


@dataclass
class Evaluation:
    results: dict
    records: list
    errors: list


class Evaluator:
    """Compile and run one program on every toolchain, then classify."""

    def __init__(
        self,
        toolchains: Mapping[str, Toolchain],
        baseline: str = "solc",
        policies: Optional[Mapping[str, ComparisonPolicy]] = None,
        patterns: Sequence = (),
        workers: int = 4,
    ):
        if baseline not in toolchains:
            raise ConfigError(f"baseline {baseline!r} not in toolchain registry")
        self.toolchains = dict(toolchains)
        self.baseline = baseline
        self.policies = dict(policies or {n: default_policy(t.id) for n, t in toolchains.items()})
        self.patterns = list(patterns)
        self.pool = ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="pf-tc")

    def close(self):
        self.pool.shutdown(wait=True)

    def _workdir(self, tc: Toolchain, root: Optional[Path], phase: str) -> Optional[Path]:
        if root is None or not isinstance(tc, SubprocessToolchain):
            return None
        return root / tc.name / phase

    def return_types(self, program: SeedProgram, base: CompileOutcome):
        abi = base.abi or solidity.abi_from_source(program.source)
        try:
            return codec.infer_types(abi, program.entry)
        except (codec.MetadataError, codec.UnsupportedType, ValueError) as e:
            log.info("%s: outputs not comparable: %s", program.id, e)
            return None

    def evaluate(
        self,
        program: SeedProgram,
        baseline_outcome: Optional[CompileOutcome] = None,
        workroot: Optional[Path] = None,
        names: Optional[Sequence[str]] = None,
    ) -> Evaluation:
        """Raises AdapterError only when the baseline itself cannot be run."""
        names = sorted(names or self.toolchains)
        errors = []

        def _compile(name):
            tc = self.toolchains[name]
            try:
                return tc.compile(program, self._workdir(tc, workroot, "compile"))
            except AdapterError as e:
                return e

        todo = [n for n in names if not (n == self.baseline and baseline_outcome is not None)]
        compiled = dict(zip(todo, self.pool.map(_compile, todo)))
        if baseline_outcome is not None:
            compiled[self.baseline] = baseline_outcome
        base = compiled[self.baseline]
        if isinstance(base, Exception):
            raise base
        for n in list(compiled):
            if isinstance(compiled[n], Exception):
                errors.append(f"AdapterError:{n}:compile")
                del compiled[n]

        execs = {}
        base_spec = self.toolchains[self.baseline].spec
        runnable = [
            n
            for n in sorted(compiled)
            if n != self.baseline
            and compiled[n].ok
            and self.toolchains[n].spec.can_execute
            and self.toolchains[n].spec.supports & EXEC_CLASSES
        ]
        if program.entry is not None and base.ok and base_spec.can_execute and runnable:
            types = self.return_types(program, base)

            def _execute(name):
                tc = self.toolchains[name]
                try:
                    out = tc.execute(compiled[name], program.entry, program, self._workdir(tc, workroot, "execute"))
                except (AdapterError, PreconditionError) as e:
                    return e
                return codec.normalize(out, types, tc.spec.output_encoding, tc.spec.address_width)

            order = [self.baseline] + runnable
            ran = dict(zip(order, self.pool.map(_execute, order)))
            if isinstance(ran[self.baseline], Exception):
                errors.append(f"{type(ran[self.baseline]).__name__}:{self.baseline}:execute")
            else:
                for n, r in ran.items():
                    if isinstance(r, Exception):
                        errors.append(f"{type(r).__name__}:{n}:execute")
                    else:
                        execs[n] = r

        results = {
            n: ToolchainResult(compiled[n], execs.get(n), self.toolchains[n].spec.supports) for n in sorted(compiled)
        }
        records = detect_all(program, results, self.policies, self.patterns, self.baseline)
        return Evaluation(results, records, errors)


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------


@dataclass
class CampaignReport:
    state_dir: str
    iterations: int
    variants: int
    baseline_compiled: int
    admitted: int
    findings: int
    filtered: int
    novel: int
    matrix: dict
    coverage_provider: str
    reward_scale: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def _read_jsonl(path: Path) -> list:
    if not path.exists():
        return []
    return [json.loads(ln) for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


@dataclass
class _Work:
    """Outcome of the parallel part of one iteration, before commit."""

    iteration: int
    seed: SeedProgram
    feature: Optional[str] = None
    rule: Optional[str] = None
    status: str = "mutated"
    variant: Optional[SeedProgram] = None
    repair_status: Optional[str] = None
    repair_rounds: int = 0
    evaluation: Optional[Evaluation] = None
    errors: list = field(default_factory=list)


class Campaign:
    def __init__(
        self,
        config: CampaignConfig,
        adapters: Optional[Mapping[str, Adapter]] = None,
        toolchains: Optional[Mapping[str, Toolchain]] = None,
    ):
        config.validate()
        self.config = config
        self.state_dir = Path(config.state_dir)
        self.catalog: RuleCatalog = load_catalog(config.catalog_path)
        if not self.catalog.populated_features():
            raise ConfigError("rule catalog has no rules")
        self.adapters = dict(adapters) if adapters is not None else adapters_from_config(config.llm, config.base_dir)
        if toolchains is None:
            specs = load_specs(config.toolchain_registry_path)
            specs = [self._apply_timeouts(s) for s in specs if config.toolchains is None or s.name in config.toolchains]
            toolchains = build_adapters(specs)
        self.toolchains = dict(toolchains)
        patterns = load_fp_patterns(config.fp_patterns_path)
        policies = {n: default_policy(t.id, config.compat) for n, t in self.toolchains.items()}
        self.evaluator = Evaluator(self.toolchains, config.baseline, policies, patterns, config.workers)
        self.coverage_provider = coverage_from_config(config.coverage)
        self.coverage = CoverageCache(self.coverage_provider)
        if config.policy_checkpoint is not None:
            self.policy = load_checkpoint(config.policy_checkpoint)
        elif (self.state_dir / "policy.json").exists() and config.policy.get("kind", "bandit") == "bandit":
            self.policy = load_checkpoint(self.state_dir / "policy.json")
        else:
            self.policy = policy_from_config(config.policy, self.catalog, self.adapters.get("rule_select"))
        self.corpus: dict = {}
        self.iteration = 0
        self.finding_ids: set = set()
        self.warnings: list = []

    def _apply_timeouts(self, spec):
        t = self.config.timeouts
        kw = {}
        if "compile_ms" in t:
            kw["compile_timeout_ms"] = int(t["compile_ms"])
        if "exec_ms" in t:
            kw["exec_timeout_ms"] = int(t["exec_ms"])
        if "max_parallel" in t:
            kw["max_parallel"] = int(t["max_parallel"])
        return replace(spec, **kw) if kw else spec

    # ---- state ---------------------------------------------------------

    @property
    def events_path(self) -> Path:
        return self.state_dir / "events.jsonl"

    @property
    def findings_path(self) -> Path:
        return self.state_dir / "findings.jsonl"

    @property
    def corpus_path(self) -> Path:
        return self.state_dir / "corpus.jsonl"

    def _append(self, path: Path, obj) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(_dump(obj) + "\n")

    def open_state(self) -> None:
        self.state_dir.mkdir(parents=True, exist_ok=True)
        (self.state_dir / "artifacts").mkdir(exist_ok=True)
        meta = {
            "baseline": self.config.baseline,
            "catalog_path": str(self.config.catalog_path),
            "coverage_provider": self.coverage_provider.kind,
            "fp_patterns_path": str(self.config.fp_patterns_path) if self.config.fp_patterns_path else None,
            "policy": self.policy.kind,
            "registry_path": str(self.config.toolchain_registry_path) if self.config.toolchain_registry_path else None,
            "reward_scale": self.config.reward_scale,
            "seed": self.config.seed,
            "toolchains": sorted(self.toolchains),
            "compat": self.config.compat,
        }
        (self.state_dir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        if self.corpus_path.exists():
            for d in _read_jsonl(self.corpus_path):
                e = CorpusEntry.from_json(d)
                self.corpus[e.program.id] = e
            self.iteration = len(_read_jsonl(self.events_path))
            self.finding_ids = {d["id"] for d in _read_jsonl(self.findings_path)}
            return
        for rel, prog in ingest_corpus(self.config.corpus_dir, self.warnings):
            entry = self._precheck(prog, rel)
            self.corpus[prog.id] = entry
            self._append(self.corpus_path, entry.to_json())

    def _precheck(self, prog: SeedProgram, rel: str) -> CorpusEntry:
        """Baseline compilability plus the seed's own findings, for novelty accounting."""
        try:
            ev = self.evaluator.evaluate(prog)
        except AdapterError as e:
            self.warnings.append(f"seed {rel}: baseline harness failure: {e}")
            return CorpusEntry(prog, "seed", False, (), rel)
        base = ev.results[self.config.baseline].compile
        keys = tuple(sorted({r.dedup_key for r in ev.records}))
        return CorpusEntry(prog, "seed", base.ok, keys, rel)

    # ---- one iteration -------------------------------------------------

    def _work(self, iteration: int, seed: SeedProgram, rng: random.Random) -> _Work:
        w = _Work(iteration, seed)
        feature = select_feature(seed, self.catalog, self.adapters["feature_select"], rng)
        rule = select_rule(feature, seed, self.catalog, self.policy, rng)
        w.feature, w.rule = feature.name, rule.id
        try:
            variant = mutate(seed, rule, self.adapters["mutate"])
        except TransportError:
            w.status, w.errors = "no_mutation", ["TransportError:mutate"]
            return w
        if variant is None:
            w.status = "no_mutation"
            return w
        baseline = self.toolchains[self.config.baseline]
        try:
            rep = repair(variant, baseline, self.adapters["mutate"], self.config.repair_rounds)
        except AdapterError:
            w.status, w.errors = "infra_error", [f"AdapterError:{baseline.name}:compile"]
            return w
        w.variant, w.repair_status, w.repair_rounds = rep.program, rep.status, rep.rounds
        workroot = self.state_dir / "work" / f"it-{iteration:06d}"
        try:
            w.evaluation = self.evaluator.evaluate(rep.program, rep.baseline, workroot)
        except AdapterError:
            w.status, w.errors = "infra_error", [f"AdapterError:{baseline.name}:compile"]
            return w
        w.errors = list(w.evaluation.errors)
        return w

    def _commit(self, w: _Work) -> None:
        event = {
            "iteration": w.iteration,
            "seed": w.seed.id,
            "feature": w.feature,
            "rule": w.rule,
            "status": w.status,
            "variant": None,
            "repair": None,
            "baseline": None,
            "reward": None,
            "findings": [],
            "admitted": False,
            "errors": w.errors,
        }
        if w.evaluation is not None:
            ev = w.evaluation
            base = ev.results[self.config.baseline].compile
            records = ev.records
            cov_b = cov_a = None
            if base.ok:
                cov_b, cov_a = self.coverage.get(w.seed), self.coverage.get(w.variant)
                if cov_b is None or cov_a is None:
                    cov_b = cov_a = None
            r = reward(RewardInput(tuple(records), base.ok, cov_b, cov_a), self.config.reward_scale)
            self.policy.update(self.catalog.rule(w.rule).feature, w.rule, r)
            parent_keys = set(self.corpus[w.seed.id].dedup_keys)
            genuine = [x for x in records if not x.fp_filtered]
            admitted = base.ok or bool(genuine)
            for rec in records:
                self._store_finding(rec, w.iteration)
            if admitted and w.variant.id not in self.corpus:
                entry = CorpusEntry(w.variant, "variant", base.ok, tuple(sorted({x.dedup_key for x in records})))
                self.corpus[w.variant.id] = entry
                self._append(self.corpus_path, entry.to_json())
            event.update(
                variant=w.variant.id,
                repair={"status": w.repair_status, "rounds": w.repair_rounds},
                baseline=base.status.value,
                reward=r,
                admitted=admitted,
                findings=[
                    {
                        "id": x.id,
                        "class": x.cls.value,
                        "other": x.other.name,
                        "key": x.dedup_key,
                        "filtered": x.fp_filtered,
                        "novel": x.dedup_key not in parent_keys,
                    }
                    for x in records
                ],
            )
            if isinstance(self.policy, BanditPolicy) and self.policy.updates % max(1, self.config.checkpoint_every) == 0:
                save_checkpoint(self.policy, self.state_dir / "policy.json")
        shutil.rmtree(self.state_dir / "work" / f"it-{w.iteration:06d}", ignore_errors=True)
        self._append(self.events_path, event)
        self.iteration = w.iteration + 1

    def _store_finding(self, rec: InconsistencyRecord, iteration: int) -> None:
        if rec.id in self.finding_ids:
            return
        self.finding_ids.add(rec.id)
        self._append(self.findings_path, rec.to_json())
        adir = self.state_dir / "artifacts" / rec.id
        adir.mkdir(parents=True, exist_ok=True)
        (adir / "program.sol").write_text(rec.program.source, encoding="utf-8")
        (adir / "record.json").write_text(json.dumps(rec.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        work = self.state_dir / "work" / f"it-{iteration:06d}"
        for name in (rec.baseline.name, rec.other.name):
            if (work / name).exists():
                shutil.copytree(work / name, adir / "work" / name, dirs_exist_ok=True)

    # ---- driver --------------------------------------------------------

    def run(self, iterations: Optional[int] = None) -> CampaignReport:
        budget = self.config.max_iterations if iterations is None else iterations
        self.open_state()
        start, deadline = self.iteration, None
        if self.config.wall_clock_s is not None:
            deadline = time.monotonic() + self.config.wall_clock_s
        batch = max(1, self.config.batch)
        end = start + budget
        with ThreadPoolExecutor(max_workers=batch, thread_name_prefix="pf-mut") as pool:
            it = start
            while it < end:
                if deadline is not None and time.monotonic() >= deadline:
                    log.info("wall-clock budget exhausted at iteration %d", it)
                    break
                ids = list(self.corpus)
                jobs = []
                for i in range(it, min(it + batch, end)):
                    rng = random.Random(f"{self.config.seed}:{i}")
                    seed = self.corpus[ids[rng.randrange(len(ids))]].program
                    jobs.append(pool.submit(self._work, i, seed, rng))
                # collect the whole batch first: workers read the policy, commits write it
                for w in [job.result() for job in jobs]:
                    self._commit(w)
                it += len(jobs)
        if isinstance(self.policy, BanditPolicy):
            save_checkpoint(self.policy, self.state_dir / "policy.json")
        self.evaluator.close()
        return build_report(self.state_dir, self.coverage_provider.kind, self.config.reward_scale)


def run_campaign(config: CampaignConfig, iterations: Optional[int] = None, **kw) -> CampaignReport:
    return Campaign(config, **kw).run(iterations)


# --------------------------------------------------------------------------
# reporting and replay
# --------------------------------------------------------------------------


def load_findings(state_dir) -> list:
    return [InconsistencyRecord.from_json(d) for d in _read_jsonl(Path(state_dir) / "findings.jsonl")]


def load_events(state_dir) -> list:
    return _read_jsonl(Path(state_dir) / "events.jsonl")


def stats_from_events(events: Sequence[dict]) -> dict:
    """Campaign counters recomputed from the event log alone."""
    keys_genuine, keys_filtered, novel = set(), set(), set()
    per_class = {c.value: set() for c in CLASS_ORDER}
    for e in events:
        for f in e.get("findings", []):
            if f["filtered"]:
                keys_filtered.add(f["key"])
                continue
            keys_genuine.add(f["key"])
            per_class[f["class"]].add(f["key"])
            if f["novel"]:
                novel.add(f["key"])
    return {
        "iterations": len(events),
        "variants": sum(1 for e in events if e.get("variant")),
        "baseline_compiled": sum(1 for e in events if e.get("baseline") == "success"),
        "admitted": sum(1 for e in events if e.get("admitted")),
        "findings": len(keys_genuine),
        "filtered": len(keys_filtered - keys_genuine),
        "novel": len(novel),
        "per_class": {k: len(v) for k, v in per_class.items()},
    }


def build_report(state_dir, coverage_provider: Optional[str] = None, reward_scale: Optional[float] = None) -> CampaignReport:
    state_dir = Path(state_dir)
    meta = _read_meta(state_dir)
    stats = stats_from_events(load_events(state_dir))
    records = load_findings(state_dir)
    toolchains = [t for t in meta.get("toolchains", []) if t != meta.get("baseline", "solc")]
    return CampaignReport(
        state_dir=str(state_dir),
        iterations=stats["iterations"],
        variants=stats["variants"],
        baseline_compiled=stats["baseline_compiled"],
        admitted=stats["admitted"],
        findings=stats["findings"],
        filtered=stats["filtered"],
        novel=stats["novel"],
        matrix=summary_matrix(records, toolchains),
        coverage_provider=coverage_provider or meta.get("coverage_provider", "null"),
        reward_scale=reward_scale if reward_scale is not None else meta.get("reward_scale", DEFAULT_SCALE),
    )


def _read_meta(state_dir: Path) -> dict:
    p = state_dir / "meta.json"
    if not p.exists():
        raise MissingArtifact(f"{state_dir} is not a campaign state directory")
    return json.loads(p.read_text(encoding="utf-8"))


def report(state_dir, fmt: str = "md") -> str:
    """Findings as JSON lines (``json``) or a markdown summary (``md``)."""
    state_dir = Path(state_dir)
    meta = _read_meta(state_dir)
    records = load_findings(state_dir)
    genuine = unique_findings(records)
    if fmt == "json":
        return "".join(_dump(r.to_json()) + "\n" for r in genuine)
    if fmt != "md":
        raise ValueError(f"unknown report format {fmt!r}")
    toolchains = [t for t in meta.get("toolchains", []) if t != meta.get("baseline", "solc")]
    rep = build_report(state_dir)
    lines = [
        "# Inconsistency report",
        "",
        f"- iterations: {rep.iterations}",
        f"- variants: {rep.variants} (baseline compiled: {rep.baseline_compiled})",
        f"- unique findings: {rep.findings} (novel: {rep.novel})",
        f"- coverage provider: {rep.coverage_provider}, reward scale: {rep.reward_scale}",
        "",
        "## Findings by toolchain and class",
        "",
        render_matrix(summary_matrix(records, toolchains)),
        "",
        "## Findings",
        "",
    ]
    if not genuine:
        lines.append("none")
    for r in genuine:
        lines.append(f"- `{r.id}` {r.cls.value} {r.baseline.name} vs {r.other.name}: `{r.dedup_key}`")
    lines += ["", "## Filtered", ""]
    filtered = unique_findings(records, filtered=True)
    if not filtered:
        lines.append("none")
    for r in filtered:
        lines.append(f"- `{r.id}` {r.cls.value} {r.other.name}: `{r.dedup_key}`")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ReplayResult:
    finding_id: str
    expected: str
    observed: list
    reproduced: bool

    @property
    def flaky(self) -> bool:
        return not self.reproduced

    def to_json(self) -> dict:
        return {
            "finding_id": self.finding_id,
            "expected": self.expected,
            "observed": self.observed,
            "reproduced": self.reproduced,
            "flaky": self.flaky,
        }


def replay(finding_id: str, state_dir, registry_path=None, toolchains: Optional[Mapping[str, Toolchain]] = None) -> ReplayResult:
    """Re-run both toolchains of a stored finding and check the class re-manifests."""
    state_dir = Path(state_dir)
    meta = _read_meta(state_dir)
    rec = next((r for r in load_findings(state_dir) if r.id == finding_id), None)
    adir = state_dir / "artifacts" / finding_id
    if rec is None or not (adir / "program.sol").exists():
        raise MissingArtifact(f"no retained artifacts for finding {finding_id!r}")
    source = (adir / "program.sol").read_text(encoding="utf-8")
    program = replace(rec.program, source=source)
    if toolchains is None:
        specs = load_specs(registry_path or meta.get("registry_path"))
        toolchains = build_adapters(specs)
    names = [rec.baseline.name, rec.other.name]
    missing = [n for n in names if n not in toolchains]
    if missing:
        raise MissingArtifact(f"toolchains {missing} not in registry")
    pair = {n: toolchains[n] for n in names}
    policies = {n: default_policy(t.id, meta.get("compat")) for n, t in pair.items()}
    ev = Evaluator(pair, rec.baseline.name, policies, (), workers=2)
    try:
        result = ev.evaluate(program)
    finally:
        ev.close()
    observed = sorted({r.cls.value for r in result.records}, key=lambda c: [x.value for x in CLASS_ORDER].index(c))
    return ReplayResult(finding_id, rec.cls.value, observed, rec.cls.value in observed)
