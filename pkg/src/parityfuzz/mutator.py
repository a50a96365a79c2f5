"""Feature/rule selection, model-driven mutation, and compile repair."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Optional

from .llm import Adapter, TransportError
from .policy import SelectionPolicy
from .rulegen import RuleCatalog, normalize_features
from .solidity import contains_container, infer_entry
from .toolchain import Toolchain
from .types import CompileOutcome, FeatureTag, MutationRule, SeedProgram

log = logging.getLogger(__name__)

DEFAULT_REPAIR_ROUNDS = 3


def select_feature(program: SeedProgram, catalog: RuleCatalog, adapter: Adapter, rng: random.Random) -> FeatureTag:
    """A catalog feature the model says the program contains.

    Falls back to a uniform pick over the catalog when none of the
    model's answers is usable.
    """
    feats = catalog.populated_features()
    if not feats:
        raise ValueError("catalog has no rules")
    if len(feats) == 1:
        return feats[0]
    req = adapter.request("feature_select", features="\n".join(f.name for f in feats), program=program.source)
    try:
        resp = adapter.complete(req)
        answers = normalize_features(resp.parsed or [])
    except TransportError as e:
        log.warning("feature_select transport failure: %s", e)
        answers = []
    known = set(feats)
    for a in answers:
        if a in known:
            return a
    log.warning("feature_select: no catalog feature in %s; choosing at random", [a.name for a in answers])
    return feats[rng.randrange(len(feats))]


def select_rule(
    feature: FeatureTag, program: SeedProgram, catalog: RuleCatalog, policy: SelectionPolicy, rng: random.Random
) -> MutationRule:
    rules = catalog.rules_for(feature)
    if not rules:
        raise ValueError(f"no rules under feature {feature}")
    if len(rules) == 1:
        return rules[0]
    return policy.select(feature, program, rules, rng)


def mutate(program: SeedProgram, rule: MutationRule, adapter: Adapter) -> Optional[SeedProgram]:
    """Apply ``rule`` through the model; None for implausible or no-op output.

    TransportError propagates to the caller.
    """
    req = adapter.request(
        "mutate", feature=rule.feature.name, rule=f"{rule.action}: {rule.description}", program=program.source
    )
    text = adapter.complete(req).parsed
    return _accept(text, program, parent_id=program.id)


def _accept(text: Optional[str], previous: SeedProgram, parent_id: Optional[str]) -> Optional[SeedProgram]:
    if text is None or not contains_container(text):
        return None
    if text == previous.source or text.strip() == previous.source.strip():
        return None
    return SeedProgram.from_source(text, parent_id=parent_id, entry=infer_entry(text))


@dataclass(frozen=True)
class RepairResult:
    program: SeedProgram
    status: str  # "compiles" or "gave_up"
    rounds: int
    baseline: CompileOutcome
    compile_calls: int

    @property
    def compiles(self) -> bool:
        return self.status == "compiles"


def repair(
    program: SeedProgram, baseline: Toolchain, adapter: Adapter, max_rounds: int = DEFAULT_REPAIR_ROUNDS
) -> RepairResult:
    """Feed baseline compile errors back to the model until the program compiles.

    Repaired variants keep the original parent, so only the final variant
    needs to enter the corpus for lineage to stay intact. A round whose
    model call fails or returns nothing usable still counts.
    """
    outcome = baseline.compile(program)
    calls = 1
    if outcome.ok:
        return RepairResult(program, "compiles", 0, outcome, calls)
    current = program
    for rnd in range(1, max_rounds + 1):
        req = adapter.request("repair", program=current.source, error=outcome.stderr)
        try:
            fixed = _accept(adapter.complete(req).parsed, current, parent_id=program.parent_id)
        except TransportError as e:
            log.warning("repair round %d transport failure: %s", rnd, e)
            fixed = None
        if fixed is None:
            continue
        current = fixed
        outcome = baseline.compile(current)
        calls += 1
        if outcome.ok:
            return RepairResult(current, "compiles", rnd, outcome, calls)
    return RepairResult(current, "gave_up", max_rounds, outcome, calls)
