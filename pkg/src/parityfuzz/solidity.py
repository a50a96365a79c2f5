"""Lightweight lexical scanning of Solidity sources.

Not a parser. It finds contract bodies by brace matching (skipping
comments and string literals) and reads function headers with regexes,
which is enough to pick an entry function and to synthesize an ABI for
mock compilers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional

from .types import Entry

_CONTAINER_RE = re.compile(r"\b(abstract\s+contract|contract|library|interface)\s+([A-Za-z_]\w*)[^{;]*\{")
_FUNC_RE = re.compile(r"\bfunction\s+([A-Za-z_]\w*)\s*\(")
_ELEMENTARY = re.compile(r"^(u?int\d*|bool|address|bytes\d*|string|byte)(\[\d*\])*$")


def strip_comments(src: str) -> str:
    """Blank out comments and string contents, preserving offsets."""
    out = list(src)
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if src.startswith("//", i):
            j = src.find("\n", i)
            j = n if j < 0 else j
            out[i:j] = " " * (j - i)
            i = j
        elif src.startswith("/*", i):
            j = src.find("*/", i + 2)
            j = n if j < 0 else j + 2
            out[i:j] = [ch if ch == "\n" else " " for ch in src[i:j]]
            i = j
        elif c in "\"'":
            j = i + 1
            while j < n and src[j] != c:
                j += 2 if src[j] == "\\" else 1
            for k in range(i + 1, min(j, n)):
                out[k] = " "
            i = j + 1
        else:
            i += 1
    return "".join(out)


def _match_close(text: str, open_idx: int, o: str = "{", c: str = "}") -> int:
    depth = 0
    for i in range(open_idx, len(text)):
        if text[i] == o:
            depth += 1
        elif text[i] == c:
            depth -= 1
            if depth == 0:
                return i
    return len(text) - 1


@dataclass(frozen=True)
class FunctionSig:
    contract: str
    container_kind: str
    name: str
    params: tuple
    returns: tuple
    visibility: str


def _split_params(s: str) -> list:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def _param_type(decl: str) -> str:
    toks = [t for t in re.split(r"\s+", decl.strip()) if t]
    if not toks:
        return ""
    if toks[0] == "mapping" or decl.lstrip().startswith("mapping"):
        return "mapping"
    ty = toks[0]
    if ty == "address" and len(toks) > 1 and toks[1] == "payable":
        ty = "address"
    return ty


def normalize_type(ty: str) -> str:
    """Canonical ABI spelling for an elementary Solidity type."""
    base = re.match(r"^([A-Za-z_]\w*)", ty)
    if not base:
        return ty
    head, suffix = base.group(1), ty[base.end():]
    head = {"uint": "uint256", "int": "int256", "byte": "bytes1"}.get(head, head)
    return head + suffix


def functions(src: str) -> list:
    """Every function header in every contract/library/interface, in order."""
    clean = strip_comments(src)
    out = []
    for m in _CONTAINER_RE.finditer(clean):
        kind = m.group(1).split()[-1] if "abstract" not in m.group(1) else "abstract"
        body_start = m.end() - 1
        body_end = _match_close(clean, body_start)
        body = clean[body_start + 1 : body_end]
        depth_base = 0
        for fm in _FUNC_RE.finditer(body):
            # only top-level members of this container
            if body[: fm.start()].count("{") - body[: fm.start()].count("}") != depth_base:
                continue
            pclose = _match_close(body, fm.end() - 1, "(", ")")
            params = tuple(_split_params(body[fm.end() : pclose]))
            rest_end = len(body)
            for stop in ("{", ";"):
                k = body.find(stop, pclose)
                if k >= 0:
                    rest_end = min(rest_end, k)
            rest = body[pclose + 1 : rest_end]
            returns: tuple = ()
            rm = re.search(r"\breturns\s*\(", rest)
            if rm:
                rclose = _match_close(rest, rm.end() - 1, "(", ")")
                returns = tuple(_split_params(rest[rm.end() : rclose]))
            vis = "internal"
            for v in ("external", "public", "private", "internal"):
                if re.search(rf"\b{v}\b", rest):
                    vis = v
                    break
            if kind == "interface":
                vis = "external"
            out.append(FunctionSig(m.group(2), kind, fm.group(1), params, returns, vis))
    return out


def infer_entry(src: str) -> Optional[Entry]:
    """First callable public/external function of a deployable contract.

    Zero-parameter functions win. Failing that, the first function whose
    parameters are all elementary types is chosen; the executor harness
    supplies zero-valued arguments for it.
    """
    callable_ = [
        f for f in functions(src) if f.container_kind == "contract" and f.visibility in ("public", "external")
    ]
    for f in callable_:
        if not f.params:
            return Entry(f.contract, f.name)
    for f in callable_:
        if all(_ELEMENTARY.match(normalize_type(_param_type(p))) for p in f.params):
            return Entry(f.contract, f.name)
    return None


def abi_from_source(src: str, contract: Optional[str] = None) -> str:
    """Synthesize a minimal ABI JSON document for public/external functions.

    Non-elementary return types are emitted verbatim so the decoder
    rejects them as unsupported.
    """
    items = []
    for f in functions(src):
        if f.visibility not in ("public", "external"):
            continue
        if contract is not None and f.contract != contract:
            continue
        items.append(
            {
                "type": "function",
                "name": f.name,
                "inputs": [{"name": "", "type": normalize_type(_param_type(p))} for p in f.params],
                "outputs": [{"name": "", "type": normalize_type(_param_type(r))} for r in f.returns],
            }
        )
    return json.dumps(items, sort_keys=True)


def contains_container(src: str) -> bool:
    return re.search(r"\b(contract|interface|library)\b", src) is not None
