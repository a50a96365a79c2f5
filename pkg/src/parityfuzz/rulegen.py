"""Mutation-rule catalog generation.

Three steps: find boundary conditions in compiler/executor sources, ask
the model which language features reach each one, then produce
syntax-oriented rules per feature and boundary-oriented rules per
(condition, feature) pair.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .llm import Adapter, FixtureMissing, ParseError, TransportError, parse_rule_lines
from .types import BoundaryCondition, FeatureTag, MutationRule, RuleKind, TriggerKind, make_rule_id

log = logging.getLogger(__name__)

CATALOG_VERSION = 1
DEFAULT_CONTEXT_LINES = 15
DEFAULT_WINDOW = 120
DEFAULT_OVERLAP = 20
DEFAULT_EXTENSIONS = (".rs", ".cpp", ".cc", ".c", ".h", ".hpp", ".d", ".go", ".ts", ".yul")

# identifier -> trigger kind; earlier entries win when a line hits several
DEFAULT_IDENTIFIERS = {
    "unimplemented": TriggerKind.UNIMPLEMENTED,
    "unreachable": TriggerKind.VALIDITY_CHECK,
    "assert": TriggerKind.ASSERTION,
    "panic": TriggerKind.ERROR_HANDLING,
    "error": TriggerKind.ERROR_HANDLING,
}


class CatalogError(ValueError):
    pass


# --------------------------------------------------------------------------
# boundary extraction
# --------------------------------------------------------------------------


def _source_files(root: Path, extensions: Sequence[str]) -> list:
    if not root.is_dir():
        raise OSError(f"source root {root} is not a readable directory")
    exts = {e.lower() for e in extensions}
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in exts)


def _read_lines(path: Path) -> list:
    return path.read_text(encoding="utf-8", errors="replace").splitlines()


def _cond_id(rel: str, line: int, kind: str) -> str:
    return "BC-" + hashlib.sha256(f"{rel}:{line}:{kind}".encode()).hexdigest()[:10]


def extract_explicit_boundaries(
    source_root,
    identifiers: Optional[dict] = None,
    context_lines: int = DEFAULT_CONTEXT_LINES,
    extensions: Sequence[str] = DEFAULT_EXTENSIONS,
) -> list:
    """One condition per source line that mentions a boundary identifier.

    Matching is a case-insensitive word match, so hits inside comments and
    string literals count too. The snippet is the hit line with
    ``context_lines`` lines on either side.
    """
    root = Path(source_root)
    idents = {k.lower(): TriggerKind(v) for k, v in (identifiers or DEFAULT_IDENTIFIERS).items()}
    # `_` is a word character, so `storage_error` does not count as `error`
    patterns = [(name, re.compile(rf"\b{re.escape(name)}\b", re.IGNORECASE)) for name in idents]
    out = []
    for path in _source_files(root, extensions):
        rel = path.relative_to(root).as_posix()
        lines = _read_lines(path)
        for i, line in enumerate(lines):
            hit = tuple(name for name, rx in patterns if rx.search(line))
            if not hit:
                continue
            kind = idents[hit[0]]
            lo, hi = max(0, i - context_lines), min(len(lines), i + context_lines + 1)
            snippet = "\n".join(lines[lo:hi])
            out.append(BoundaryCondition(_cond_id(rel, i + 1, kind.value), f"{rel}:{i + 1}", snippet, kind, hit))
    return out


def chunk_lines(lines: Sequence[str], window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP) -> list:
    """(start_index, chunk_lines) windows of at most ``window`` lines."""
    if window <= overlap:
        raise ValueError("window must exceed overlap")
    if not lines:
        return []
    step = window - overlap
    out = []
    start = 0
    while True:
        out.append((start, list(lines[start : start + window])))
        if start + window >= len(lines):
            break
        start += step
    return out


def extract_implicit_boundaries(
    source_root,
    adapter: Adapter,
    window: int = DEFAULT_WINDOW,
    overlap: int = DEFAULT_OVERLAP,
    extensions: Sequence[str] = DEFAULT_EXTENSIONS,
    warnings: Optional[list] = None,
) -> list:
    """Ask the model, chunk by chunk, whether code handles an implicit boundary.

    Transport failures are recorded in ``warnings`` and the chunk is
    skipped; what was found before the failure is kept.
    """
    root = Path(source_root)
    warnings = warnings if warnings is not None else []
    out = []
    for path in _source_files(root, extensions):
        rel = path.relative_to(root).as_posix()
        for start, chunk in chunk_lines(_read_lines(path), window, overlap):
            text = "\n".join(chunk)
            if not text.strip():
                continue
            req = adapter.request("boundary_extract_implicit", path=rel, chunk=text)
            try:
                resp = adapter.complete(req)
            except TransportError as e:
                warnings.append(f"implicit scan {rel}:{start + 1}: {e}")
                continue
            if resp.parsed is None:
                warnings.append(f"implicit scan {rel}:{start + 1}: unparseable answer")
                continue
            positive, _why = resp.parsed
            if positive:
                out.append(
                    BoundaryCondition(
                        _cond_id(rel, start + 1, TriggerKind.IMPLICIT.value),
                        f"{rel}:{start + 1}",
                        text,
                        TriggerKind.IMPLICIT,
                        (),
                    )
                )
    return out


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------

FEATURE_ALIASES = {
    "structs": "struct",
    "structure": "struct",
    "structures": "struct",
    "struct type": "struct",
    "fixed size array": "fixed-size array",
    "fixed-length array": "fixed-size array",
    "fixed length array": "fixed-size array",
    "static array": "fixed-size array",
    "fixed-size arrays": "fixed-size array",
    "dynamic arrays": "dynamic array",
    "internal functions": "internal function",
    "mappings": "mapping",
    "delete": "delete-operation",
    "delete operation": "delete-operation",
    "delete statement": "delete-operation",
    "delegate call": "delegatecall",
    "delegatecalls": "delegatecall",
    "assembly": "inline assembly",
    "yul": "inline assembly",
    "inline-assembly": "inline assembly",
    "user defined value type": "user-defined value type",
    "user-defined value types": "user-defined value type",
    "udvt": "user-defined value type",
    "modifiers": "modifier",
    "events": "event",
    "enums": "enum",
    "libraries": "library",
    "interfaces": "interface",
    "custom errors": "custom error",
    "function selectors": "function selector",
    "selector": "function selector",
}

_FEATURE_JUNK = re.compile(r"[^a-z0-9 _\-/().]")


def normalize_feature(raw: str) -> Optional[FeatureTag]:
    """Lowercase, fold whitespace and synonyms; None when nothing is left."""
    name = " ".join(raw.strip().strip("`*\"'").lower().split())
    name = _FEATURE_JUNK.sub("", name).strip(" -")
    name = FEATURE_ALIASES.get(name, name)
    if not name:
        return None
    try:
        return FeatureTag(name)
    except ValueError:
        return None


def normalize_features(raws: Iterable[str]) -> list:
    seen, out = set(), []
    for r in raws:
        tag = normalize_feature(r)
        if tag is not None and tag not in seen:
            seen.add(tag)
            out.append(tag)
    return out


def identify_features(cond: BoundaryCondition, adapter: Adapter, warnings: Optional[list] = None) -> list:
    req = adapter.request("feature_identify", snippet=cond.snippet)
    resp = adapter.complete(req)
    if resp.parsed is None:
        if warnings is not None:
            warnings.append(f"feature_identify {cond.id}: unparseable answer")
        return []
    return normalize_features(resp.parsed)


# --------------------------------------------------------------------------
# rules
# --------------------------------------------------------------------------


def _dedup_rules(rules: Iterable[MutationRule]) -> list:
    seen, out = set(), []
    for r in rules:
        key = (r.kind, r.feature, r.action, " ".join(r.description.lower().split()), r.origin)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


def _rules_from_text(text: str, kind: RuleKind, feature: FeatureTag, origin: str, warnings, where: str) -> list:
    try:
        parsed = parse_rule_lines(text)
    except ParseError:
        if warnings is not None:
            warnings.append(f"{where}: no rule lines parsed")
        return []
    if parsed.rejected_actions and warnings is not None:
        warnings.append(f"{where}: rejected actions {sorted(set(parsed.rejected_actions))}")
    oid = origin if kind is RuleKind.BOUNDARY else ""
    rules = [MutationRule(make_rule_id(kind, feature.name, a, d, oid), kind, feature, a, d, origin) for a, d in parsed.rules]
    return _dedup_rules(rules)


def gen_syntax_rules(feature: FeatureTag, adapter: Adapter, warnings: Optional[list] = None) -> list:
    resp = adapter.complete(adapter.request("so_rule_gen", feature=feature.name))
    return _rules_from_text(resp.text, RuleKind.SYNTAX, feature, "syntax", warnings, f"so_rule_gen {feature}")


def format_rules(rules: Iterable[MutationRule]) -> str:
    return "\n".join(f"{r.action}: {r.description}" for r in rules)


def gen_boundary_rules(
    cond: BoundaryCondition,
    feature: FeatureTag,
    so_rules: Sequence[MutationRule],
    adapter: Adapter,
    warnings: Optional[list] = None,
) -> list:
    """Boundary-oriented rules for exactly one (condition, feature) pair."""
    if any(r.feature != feature for r in so_rules):
        raise ValueError("reference rules must all belong to the requested feature")
    req = adapter.request(
        "bo_rule_gen",
        source_path=cond.source_path,
        snippet=cond.snippet,
        feature=feature.name,
        so_rules=format_rules(so_rules) or "(none)",
    )
    resp = adapter.complete(req)
    return _rules_from_text(resp.text, RuleKind.BOUNDARY, feature, cond.id, warnings, f"bo_rule_gen {cond.id}/{feature}")


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleCatalog:
    features: tuple = ()
    conditions: tuple = ()
    rules: tuple = ()
    version: int = CATALOG_VERSION

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(sorted(set(self.features))))
        object.__setattr__(self, "conditions", tuple(sorted(self.conditions, key=lambda c: c.id)))
        object.__setattr__(self, "rules", tuple(sorted(self.rules, key=lambda r: (r.feature.name, r.id))))
        feats = set(self.features)
        cond_ids = {c.id for c in self.conditions}
        ids = set()
        for r in self.rules:
            if r.feature not in feats:
                raise CatalogError(f"rule {r.id} references unknown feature {r.feature}")
            if r.kind is RuleKind.BOUNDARY and r.origin not in cond_ids:
                raise CatalogError(f"boundary rule {r.id} has unresolved origin {r.origin!r}")
            if r.id in ids:
                raise CatalogError(f"duplicate rule id {r.id}")
            ids.add(r.id)
        if len(cond_ids) != len(self.conditions):
            raise CatalogError("duplicate condition id")

    def __len__(self):
        return len(self.rules)

    def rules_for(self, feature: FeatureTag) -> list:
        return [r for r in self.rules if r.feature == feature]

    def rule(self, rule_id: str) -> MutationRule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)

    def groups(self) -> dict:
        out = {f: {"so": [], "bo": []} for f in self.features}
        for r in self.rules:
            out[r.feature]["so" if r.kind is RuleKind.SYNTAX else "bo"].append(r)
        return out

    def populated_features(self) -> list:
        return [f for f, g in self.groups().items() if g["so"] or g["bo"]]

    def to_json(self) -> dict:
        groups = self.groups()
        return {
            "catalog_version": self.version,
            "features": [
                {
                    "name": f.name,
                    "syntax_oriented": [r.id for r in groups[f]["so"]],
                    "boundary_oriented": [r.id for r in groups[f]["bo"]],
                }
                for f in self.features
            ],
            "conditions": [c.to_json() for c in self.conditions],
            "rules": [r.to_json() for r in self.rules],
        }

    @classmethod
    def from_json(cls, d: dict) -> "RuleCatalog":
        version = int(d.get("catalog_version", 0))
        if version != CATALOG_VERSION:
            raise CatalogError(f"unsupported catalog_version {version}")
        feats = []
        for f in d.get("features", []):
            feats.append(FeatureTag(f["name"] if isinstance(f, dict) else f))
        cat = cls(
            features=tuple(feats),
            conditions=tuple(BoundaryCondition.from_json(c) for c in d.get("conditions", [])),
            rules=tuple(MutationRule.from_json(r) for r in d.get("rules", [])),
        )
        # group lists are derived data; reject a file where they disagree with the rules
        groups = cat.groups()
        for f in d.get("features", []):
            if not isinstance(f, dict):
                continue
            g = groups[FeatureTag(f["name"])]
            if "syntax_oriented" in f and f["syntax_oriented"] != [r.id for r in g["so"]]:
                raise CatalogError(f"feature {f['name']}: syntax_oriented list disagrees with rules")
            if "boundary_oriented" in f and f["boundary_oriented"] != [r.id for r in g["bo"]]:
                raise CatalogError(f"feature {f['name']}: boundary_oriented list disagrees with rules")
        return cat


def build_catalog(conditions: Iterable, features: Iterable, rules: Iterable) -> RuleCatalog:
    return RuleCatalog(tuple(features), tuple(conditions), tuple(_dedup_rules(rules)))


def save_catalog(catalog: RuleCatalog, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(catalog.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_catalog(path) -> RuleCatalog:
    with open(path, encoding="utf-8") as fh:
        return RuleCatalog.from_json(json.load(fh))


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------


@dataclass
class GenerationResult:
    catalog: RuleCatalog
    warnings: list = field(default_factory=list)


def generate_catalog(
    source_roots: Sequence,
    adapter: Adapter,
    explicit_only: bool = False,
    context_lines: int = DEFAULT_CONTEXT_LINES,
    window: int = DEFAULT_WINDOW,
    overlap: int = DEFAULT_OVERLAP,
    extensions: Sequence[str] = DEFAULT_EXTENSIONS,
    workers: int = 4,
) -> GenerationResult:
    """Run the whole extraction-to-catalog pipeline over one or more source roots.

    Model calls fan out over a thread pool; results are merged in input
    order, so the catalog does not depend on scheduling.
    """
    warnings: list = []
    conditions = []
    for root in source_roots:
        conditions.extend(extract_explicit_boundaries(root, context_lines=context_lines, extensions=extensions))
        if not explicit_only:
            conditions.extend(extract_implicit_boundaries(root, adapter, window, overlap, extensions, warnings))
    # the same snippet reached from two roots is one condition
    uniq = {}
    for c in conditions:
        uniq.setdefault(c.id, c)
    conditions = list(uniq.values())

    def _call(fn, *args):
        try:
            return fn(*args, warnings=warnings)
        except FixtureMissing:
            raise
        except TransportError as e:
            warnings.append(f"{fn.__name__}: {e}")
            return []

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        feats_per_cond = list(pool.map(lambda c: _call(identify_features, c, adapter), conditions))
        vocab = sorted({f for fs in feats_per_cond for f in fs})
        so_per_feat = dict(zip(vocab, pool.map(lambda f: _call(gen_syntax_rules, f, adapter), vocab)))
        pairs = [(c, f) for c, fs in zip(conditions, feats_per_cond) for f in fs]
        bo_lists = list(pool.map(lambda p: _call(gen_boundary_rules, p[0], p[1], so_per_feat[p[1]], adapter), pairs))

    rules = [r for f in vocab for r in so_per_feat[f]] + [r for lst in bo_lists for r in lst]
    return GenerationResult(build_catalog(conditions, vocab, rules), warnings)
