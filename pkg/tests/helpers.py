"""Shared builders and hypothesis strategies for the test suite."""

from __future__ import annotations

import shutil
from pathlib import Path

from hypothesis import strategies as st

from parityfuzz import codec
from parityfuzz.codec import TypeDesc
from parityfuzz.types import (
    Address,
    Array,
    Bool,
    Bytes,
    CompileOutcome,
    CompileStatus,
    ExecOutcome,
    ExecStatus,
    Int,
    Str,
    ToolchainId,
    Tuple,
    UInt,
)

DATA = Path(__file__).parent / "data"
MOCKENV = DATA / "mockenv"

# one "criterion N: PASS|FAIL|SKIP ..." line per acceptance criterion, printed by conftest
ACCEPTANCE: list = []


def copy_mockenv(tmp_path: Path) -> Path:
    dst = tmp_path / "mockenv"
    shutil.copytree(MOCKENV, dst, ignore=shutil.ignore_patterns("state", "parityfuzz-state"))
    return dst


# ---------------------------------------------------------------- outcomes


def tc(name: str) -> ToolchainId:
    return ToolchainId(name, "test")


def compiled(name: str, status=CompileStatus.SUCCESS, clear: bool = False, stderr: str = "") -> CompileOutcome:
    status = CompileStatus(status)
    if status is CompileStatus.SUCCESS:
        return CompileOutcome(tc(name), status, bytecode=b"\x60\x80", stderr=stderr)
    return CompileOutcome(tc(name), status, stderr=stderr or f"{name} said no", clear_error=clear)


def executed(name: str, status=ExecStatus.SUCCESS, value=None, stderr: str = "") -> ExecOutcome:
    status = ExecStatus(status)
    if status is ExecStatus.SUCCESS:
        value = value if value is not None else Tuple((UInt(0),))
        return ExecOutcome(tc(name), status, raw_output=b"\x00" * 32, decoded=value)
    return ExecOutcome(tc(name), status, stderr=stderr or f"{name} trapped")


# ---------------------------------------------------------------- strategies

_INT_BITS = st.sampled_from([8, 16, 32, 64, 128, 256])


def scalar_types():
    return st.one_of(
        _INT_BITS.map(lambda n: TypeDesc("uint", size=n)),
        _INT_BITS.map(lambda n: TypeDesc("int", size=n)),
        st.just(TypeDesc("bool")),
        st.just(TypeDesc("address")),
        st.integers(1, 32).map(lambda n: TypeDesc("fbytes", size=n)),
        st.just(TypeDesc("bytes")),
        st.just(TypeDesc("string")),
    )


def abi_types(depth: int = 3):
    """Descriptors whose values nest at most ``depth`` levels deep."""
    if depth <= 1:
        return scalar_types()
    inner = abi_types(depth - 1)
    return st.one_of(
        scalar_types(),
        st.tuples(inner, st.none() | st.integers(0, 3)).map(lambda p: TypeDesc("array", elem=p[0], length=p[1])),
        st.lists(inner, min_size=1, max_size=3).map(lambda cs: TypeDesc("tuple", components=tuple(cs))),
    )


def value_for(t: TypeDesc):
    k = t.kind
    if k == "uint":
        return st.integers(0, (1 << t.size) - 1).map(UInt)
    if k == "int":
        return st.integers(-(1 << (t.size - 1)), (1 << (t.size - 1)) - 1).map(Int)
    if k == "bool":
        return st.booleans().map(Bool)
    if k == "address":
        return st.binary(min_size=20, max_size=20).map(Address)
    if k == "fbytes":
        return st.binary(min_size=t.size, max_size=t.size).map(Bytes)
    if k == "bytes":
        return st.binary(max_size=70).map(Bytes)
    if k == "string":
        return st.text(max_size=40).map(Str)
    if k == "array":
        n = t.length
        items = st.lists(value_for(t.elem), min_size=n or 0, max_size=n if n is not None else 3)
        return items.map(lambda xs: Array(tuple(xs)))
    return st.tuples(*(value_for(c) for c in t.components)).map(Tuple)


@st.composite
def typed_values(draw, depth: int = 3, max_top: int = 3):
    """(descriptor list, Tuple value) pairs for whole return payloads."""
    types = draw(st.lists(abi_types(depth), min_size=0, max_size=max_top))
    value = Tuple(tuple(draw(value_for(t)) for t in types))
    return types, value


def canonical_values(depth: int = 5):
    leaves = st.one_of(
        st.integers(0, 5).map(UInt),
        st.integers(-3, 3).map(Int),
        st.booleans().map(Bool),
        st.binary(max_size=2).map(Bytes),
        st.sampled_from(["", "a", "b"]).map(Str),
        st.sampled_from([b"\x00" * 20, b"\x01" * 20]).map(Address),
    )
    return st.recursive(
        leaves,
        lambda kids: st.one_of(
            st.lists(kids, max_size=3).map(lambda xs: Tuple(tuple(xs))),
            st.lists(kids, max_size=3).map(lambda xs: Array(tuple(xs))),
        ),
        max_leaves=12,
    ).filter(lambda v: _depth(v) <= depth)


def _depth(v) -> int:
    if isinstance(v, (Tuple, Array)):
        return 1 + max((_depth(x) for x in v.items), default=0)
    return 1


def both_codecs(types, value, address_width: int = 20):
    """Decode ``value`` through both codecs; returns (abi_value, borsh_value)."""
    a = codec.decode_abi(codec.encode_abi(value, types), types)
    b_types = [codec.abi_to_borsh(t) for t in types]
    b = codec.decode_borsh(codec.encode_borsh(value, b_types, address_width), b_types, address_width=address_width)
    return a, b
