"""Chat-model adapters.

Every model call in the pipeline goes through :meth:`Adapter.complete`
with a :class:`PromptRequest` naming one of the prompt templates below.
Two implementations exist: :class:`HttpAdapter` talks to an
OpenAI-compatible chat-completions endpoint, :class:`FixtureAdapter`
answers from a fixture directory and is what the tests and the offline
mock mode use.

Response grammars are line-oriented plain text rather than JSON.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import httpx

from .types import ACTIONS, FeatureTag, MutationRule, RuleKind, make_rule_id

log = logging.getLogger(__name__)

ENV_FIXTURES = "PARITYFUZZ_FIXTURES"


class TransportError(RuntimeError):
    pass


class ParseError(ValueError):
    def __init__(self, msg: str, raw: str = ""):
        super().__init__(msg)
        self.raw = raw


class FixtureMissing(LookupError):
    pass


TEMPLATES = {
    "boundary_extract_implicit": (
        "You are auditing the source code of a Solidity compiler or its execution environment.\n"
        "Implicit boundary conditions are places where behavior silently changes at an edge: "
        "type casts, truncation, memory or storage out-of-bounds access, overflow, unsupported widths.\n"
        "File: $path\n"
        "```\n$chunk\n```\n"
        "Does this code handle an implicit boundary condition? Answer YES or NO on the first line, "
        "then one line naming the condition if YES."
    ),
    "feature_identify": (
        "The following code block from a Solidity compiler contains a boundary condition.\n"
        "```\n$snippet\n```\n"
        "List the Solidity language features whose use can reach this code block "
        "(for example: struct, fixed-size array, internal function). One feature per line, no prose."
    ),
    "so_rule_gen": (
        "Solidity language feature: $feature\n"
        "1. List the mutation points of this feature (for a struct: field types, visibility, declaration location).\n"
        "2. For each mutation point write mutation rules using exactly one of these actions: "
        "insert, increase, replace, modify, clear.\n"
        "Answer with one rule per line in the form `<action>: <description>`."
    ),
    "bo_rule_gen": (
        "Boundary condition (from $source_path):\n```\n$snippet\n```\n"
        "Feature: $feature\n"
        "Reference syntax-oriented rules for this feature:\n$so_rules\n"
        "1. Analyze how a program using the feature $feature can trigger the boundary condition above.\n"
        "2. Select one of the reference rules, or synthesize a new one based on them, that makes a program "
        "trigger this boundary condition. Use one of: insert, increase, replace, modify, clear.\n"
        "Answer with one rule per line in the form `<action>: <description>`."
    ),
    "feature_select": (
        "Which of the following Solidity features does this program contain?\n"
        "Features:\n$features\n"
        "Program:\n```solidity\n$program\n```\n"
        "Answer with the most suitable feature to mutate first, then any others, one per line."
    ),
    "rule_select": (
        "Program:\n```solidity\n$program\n```\n"
        "Feature to mutate: $feature\n"
        "Candidate mutation rules (id: description):\n$rules\n"
        "Answer with the id of the single best rule for this program."
    ),
    "mutate": (
        "Apply the following mutation rule to the Solidity program.\n"
        "Rule ($feature): $rule\n"
        "Program:\n```solidity\n$program\n```\n"
        "Return only the complete mutated program."
    ),
    "repair": (
        "The following Solidity program fails to compile with solc.\n"
        "Program:\n```solidity\n$program\n```\n"
        "Compiler output:\n```\n$error\n```\n"
        "Fix the program so that it compiles, keeping the mutated construct if possible. "
        "Return only the complete program."
    ),
}


def template_slots(template_id: str) -> set:
    tpl = string.Template(TEMPLATES[template_id])
    return {m.group("named") or m.group("braced") for m in tpl.pattern.finditer(tpl.template) if m.group("named") or m.group("braced")}


@dataclass(frozen=True)
class PromptRequest:
    template_id: str
    slots: dict
    temperature: float
    seed: int

    def __post_init__(self):
        if self.template_id not in TEMPLATES:
            raise ValueError(f"unknown template {self.template_id!r}")
        missing = template_slots(self.template_id) - set(self.slots)
        if missing:
            raise ValueError(f"{self.template_id}: unfilled slots {sorted(missing)}")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        object.__setattr__(self, "slots", {k: str(v) for k, v in self.slots.items()})

    def render(self) -> str:
        return string.Template(TEMPLATES[self.template_id]).substitute(self.slots)

    def canonical(self) -> str:
        return json.dumps(
            {"template_id": self.template_id, "slots": self.slots, "temperature": self.temperature, "seed": self.seed},
            sort_keys=True,
            ensure_ascii=False,
        )

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelResponse:
    text: str
    parsed: object = None
    usage: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# response grammars
# --------------------------------------------------------------------------

_LIST_PREFIX = re.compile(r"^\s*(?:[-*+•]|\d+[.)]|\(\d+\))\s*")
_RULE_LINE = re.compile(r"^([A-Za-z]+)\s*:\s*(\S.*)$")


def _list_lines(text: str) -> list:
    return [_LIST_PREFIX.sub("", ln).strip().strip("`") for ln in text.splitlines() if ln.strip()]


@dataclass
class ParsedRules:
    rules: list
    skipped: int
    rejected_actions: list = field(default_factory=list)


def parse_rule_lines(text: str) -> ParsedRules:
    """Parse ``<action>: <description>`` lines.

    Returns (action, description) pairs. Lines that do not fit the grammar,
    or name an action outside the closed five-action set, are skipped and
    counted. Raises ParseError when nothing parses.
    """
    good, skipped, rejected = [], 0, []
    for ln in _list_lines(text):
        m = _RULE_LINE.match(ln)
        if not m:
            skipped += 1
            continue
        action = m.group(1).lower()
        if action not in ACTIONS:
            rejected.append(action)
            skipped += 1
            continue
        good.append((action, " ".join(m.group(2).split())))
    if not good:
        raise ParseError("no rule lines parsed", text)
    return ParsedRules(good, skipped, rejected)


def parse_rules(
    text: str,
    feature: FeatureTag = FeatureTag("unlabeled"),
    kind: RuleKind = RuleKind.SYNTAX,
    origin: str = "generated",
) -> list:
    """Rules from a numbered/bulleted ``<action>: <description>`` list."""
    parsed = parse_rule_lines(text)
    oid = origin if kind is RuleKind.BOUNDARY else ""
    return [
        MutationRule(make_rule_id(kind, feature.name, a, d, oid), kind, feature, a, d, origin)
        for a, d in parsed.rules
    ]


def parse_features(text: str) -> list:
    """One feature per line. Long prose lines and headings ending in a colon are dropped."""
    out = []
    for ln in _list_lines(text):
        ln = re.sub(r"^features?\s*:\s*", "", ln, flags=re.IGNORECASE).strip().rstrip(".,;").strip()
        if ln and len(ln) <= 60 and not ln.endswith(":"):
            out.append(ln)
    return out


def parse_yes_no(text: str) -> tuple:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty yes/no answer", text)
    head = lines[0].upper().strip(".:! ")
    if head.startswith("YES"):
        return True, " ".join(lines[1:])
    if head.startswith("NO"):
        return False, ""
    raise ParseError(f"expected YES or NO, got {lines[0]!r}", text)


_FENCE = re.compile(r"```[A-Za-z]*\n(.*?)```", re.DOTALL)


def parse_program(text: str) -> str:
    m = _FENCE.search(text)
    body = m.group(1) if m else text
    body = body.strip("\n")
    if not body.strip():
        raise ParseError("empty program", text)
    return body + "\n" if not body.endswith("\n") else body


def parse_rule_id(text: str, known_ids) -> str:
    known = set(known_ids)
    for ln in _list_lines(text):
        ln = re.sub(r"^(?:rule(?:\s*id)?\s*[:=]\s*)", "", ln, flags=re.IGNORECASE).strip()
        for tok in re.findall(r"[\w\-]+", ln):
            if tok in known:
                return tok
    raise ParseError("no known rule id in answer", text)


_PARSERS: dict = {
    "boundary_extract_implicit": parse_yes_no,
    "feature_identify": parse_features,
    "feature_select": parse_features,
    "so_rule_gen": lambda t: parse_rule_lines(t).rules,
    "bo_rule_gen": lambda t: parse_rule_lines(t).rules,
    "mutate": parse_program,
    "repair": parse_program,
}


def parse_response(req: PromptRequest, text: str):
    """Structured payload for ``text`` or None when the grammar does not match."""
    if req.template_id == "rule_select":
        ids = [ln.split(":", 1)[0].strip() for ln in req.slots.get("rules", "").splitlines() if ":" in ln]
        try:
            return parse_rule_id(text, ids)
        except ParseError:
            return None
    try:
        return _PARSERS[req.template_id](text)
    except ParseError:
        return None


# --------------------------------------------------------------------------
# adapters
# --------------------------------------------------------------------------


class Adapter:
    temperature: float = 0.0
    seed: int = 0

    def request(self, template_id: str, **slots) -> PromptRequest:
        return PromptRequest(template_id, slots, self.temperature, self.seed)

    def complete(self, req: PromptRequest) -> ModelResponse:
        raise NotImplementedError


_SUBST = re.compile(r"\{\{(\w+)\}\}")


class FixtureAdapter(Adapter):
    """Answers from ``<fixtures>/<template_id>/<request-hash>.txt``.

    When no exact-hash file exists, ``<fixtures>/<template_id>/patterns.json``
    is consulted: an ordered list of ``{"match": {slot: regex, ...},
    "response": text}`` entries, first match wins. ``{{slot}}`` in a
    pattern response is replaced by that slot's value. A request matching
    neither raises FixtureMissing; there is no implicit empty answer.
    """

    def __init__(self, root, temperature: float = 0.0, seed: int = 0):
        self.root = Path(root)
        self.temperature = temperature
        self.seed = seed
        self._patterns: dict = {}

    def _load_patterns(self, template_id: str) -> list:
        if template_id not in self._patterns:
            p = self.root / template_id / "patterns.json"
            entries = []
            if p.exists():
                for e in json.loads(p.read_text(encoding="utf-8")):
                    compiled = {k: re.compile(v, re.DOTALL | re.MULTILINE) for k, v in e.get("match", {}).items()}
                    entries.append((compiled, e["response"]))
            self._patterns[template_id] = entries
        return self._patterns[template_id]

    def lookup(self, req: PromptRequest) -> str:
        exact = self.root / req.template_id / f"{req.digest()}.txt"
        if exact.exists():
            return exact.read_text(encoding="utf-8")
        for match, response in self._load_patterns(req.template_id):
            if all(rx.search(req.slots.get(slot, "")) for slot, rx in match.items()):
                return _SUBST.sub(lambda m: req.slots.get(m.group(1), ""), response)
        raise FixtureMissing(f"no fixture for {req.template_id} request {req.digest()[:12]} under {self.root}")

    def complete(self, req: PromptRequest) -> ModelResponse:
        text = self.lookup(req)
        return ModelResponse(text=text, parsed=parse_response(req, text), usage={"prompt_tokens": 0, "completion_tokens": 0})


def write_fixture(root, req: PromptRequest, text: str) -> Path:
    """Store an exact-hash fixture answering ``req``."""
    d = Path(root) / req.template_id
    d.mkdir(parents=True, exist_ok=True)
    p = d / f"{req.digest()}.txt"
    p.write_text(text, encoding="utf-8")
    return p


class FunctionAdapter(Adapter):
    """In-process adapter backed by a pure function of the request."""

    def __init__(self, fn: Callable[[PromptRequest], str], temperature: float = 0.0, seed: int = 0):
        self.fn = fn
        self.temperature = temperature
        self.seed = seed

    def complete(self, req: PromptRequest) -> ModelResponse:
        text = self.fn(req)
        return ModelResponse(text=text, parsed=parse_response(req, text))


class HttpAdapter(Adapter):
    """OpenAI-compatible ``/chat/completions`` client with retry and backoff.

    Seed and temperature always come from configuration and are sent on
    every call.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: Optional[str] = None,
        temperature: float = 0.0,
        seed: int = 0,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.seed = seed
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.client = httpx.Client(timeout=timeout_s, transport=transport)
        self.attempts = 0

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                h["Authorization"] = f"Bearer {key}"
        return h

    def complete(self, req: PromptRequest) -> ModelResponse:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.render()}],
            "temperature": req.temperature,
            "seed": req.seed,
        }
        last: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            self.attempts += 1
            try:
                r = self.client.post(f"{self.endpoint}/chat/completions", json=body, headers=self._headers())
                if r.status_code >= 500 or r.status_code == 429:
                    raise httpx.HTTPStatusError(f"status {r.status_code}", request=r.request, response=r)
                r.raise_for_status()
                data = r.json()
                text = data["choices"][0]["message"]["content"] or ""
                return ModelResponse(text=text, parsed=parse_response(req, text), usage=data.get("usage", {}))
            except (httpx.TransportError, httpx.HTTPStatusError) as e:
                last = e
                status = getattr(getattr(e, "response", None), "status_code", None)
                if status is not None and status < 500 and status != 429:
                    break
                if attempt < self.max_retries:
                    time.sleep(self.backoff_s * (2**attempt))
            except (KeyError, IndexError, ValueError) as e:
                raise TransportError(f"malformed completion payload: {e}") from e
        raise TransportError(f"{self.endpoint}: giving up after {self.attempts} attempt(s): {last}")


ROLES = ("rulegen", "feature_select", "rule_select", "mutate")
_ROLE_OF = {
    "boundary_extract_implicit": "rulegen",
    "feature_identify": "rulegen",
    "so_rule_gen": "rulegen",
    "bo_rule_gen": "rulegen",
    "feature_select": "feature_select",
    "rule_select": "rule_select",
    "mutate": "mutate",
    "repair": "mutate",
}


def role_for(template_id: str) -> str:
    return _ROLE_OF[template_id]


def adapter_from_config(cfg: dict, base_dir: Optional[Path] = None) -> Adapter:
    """Build one adapter from a role config block.

    ``{"kind": "mock", "fixtures": dir}`` or ``{"kind": "http", "endpoint":
    url, "model": name, "api_key_env": VAR, "temperature": t, "seed": s,
    "max_retries": n}``. A mock without ``fixtures`` reads
    ``$PARITYFUZZ_FIXTURES``.
    """
    kind = cfg.get("kind", "mock")
    temperature = float(cfg.get("temperature", 0.0))
    seed = int(cfg.get("seed", 0))
    if kind == "mock":
        root = cfg.get("fixtures") or os.environ.get(ENV_FIXTURES)
        if not root:
            raise ValueError(f"mock adapter needs 'fixtures' or ${ENV_FIXTURES}")
        root = Path(root)
        if base_dir is not None and not root.is_absolute():
            root = base_dir / root
        return FixtureAdapter(root, temperature=temperature, seed=seed)
    if kind == "http":
        return HttpAdapter(
            endpoint=cfg["endpoint"],
            model=cfg["model"],
            api_key_env=cfg.get("api_key_env"),
            temperature=temperature,
            seed=seed,
            max_retries=int(cfg.get("max_retries", 3)),
            backoff_s=float(cfg.get("backoff_s", 1.0)),
            timeout_s=float(cfg.get("timeout_s", 120.0)),
        )
    raise ValueError(f"unknown adapter kind {kind!r}")


def adapters_from_config(llm_cfg: dict, base_dir: Optional[Path] = None) -> dict:
    """Map role -> adapter. A ``default`` block fills roles not listed."""
    out = {}
    for role in ROLES:
        block = llm_cfg.get(role, llm_cfg.get("default"))
        if block is None:
            raise ValueError(f"no LLM config for role {role!r}")
        out[role] = adapter_from_config(block, base_dir)
    return out
