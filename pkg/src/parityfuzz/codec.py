"""Decode executor return data into canonical values.

EVM-family executors return ABI-encoded data; the SVM executor behind
Solang returns Borsh. Both decoders are strict (non-zero padding, bad
bool bytes and trailing data are errors) and both have matching
encoders that serve as round-trip oracles in the test suite.

Type descriptors are parsed into :class:`TypeDesc`. ABI strings look like
``uint256``, ``bytes32``, ``uint8[2][]`` or ``(uint256,bool)``; Borsh
strings look like ``u64``, ``vec<u8>``, ``[u16; 3]``, ``bytes4`` or
``(u8,string)``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .types import (
    Address,
    Array,
    Bool,
    Bytes,
    CanonicalValue,
    Entry,
    ExecOutcome,
    Int,
    Str,
    Tuple,
    UInt,
)


class DecodeError(ValueError):
    pass


class EncodeError(ValueError):
    pass


class MetadataError(LookupError):
    pass


class UnsupportedType(ValueError):
    """Return type we refuse to compare (function types, mappings, ...)."""


@dataclass(frozen=True)
class TypeDesc:
    kind: str  # uint int bool address fbytes bytes string array tuple
    size: int = 0  # bit width for ints, byte length for fbytes
    elem: Optional["TypeDesc"] = None
    length: Optional[int] = None  # None = dynamic array
    components: tuple = ()

    def __str__(self):
        return abi_type_str(self)


# --------------------------------------------------------------------------
# descriptor parsing
# --------------------------------------------------------------------------


def _split_top(inner: str) -> list:
    parts, depth, cur = [], 0, []
    for ch in inner:
        if ch in "([<":
            depth += 1
        elif ch in ")]>":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail or parts:
        parts.append(tail)
    return parts


def _peel_array_suffix(s: str):
    """Split ``T[2][]`` into (``T[2]``, None) ; returns (s, False) if no suffix."""
    if not s.endswith("]"):
        return s, False, None
    depth = 0
    for i in range(len(s) - 1, -1, -1):
        if s[i] == "]":
            depth += 1
        elif s[i] == "[":
            depth -= 1
            if depth == 0:
                inside = s[i + 1 : -1].strip()
                if inside == "":
                    return s[:i], True, None
                if inside.isdigit():
                    return s[:i], True, int(inside)
                break
    return s, False, None


_ABI_INT = re.compile(r"^(u?int)(\d*)$")
_ABI_FBYTES = re.compile(r"^bytes(\d+)$")


def parse_abi_type(s: str) -> TypeDesc:
    s = s.strip()
    if s.startswith("tuple("):
        s = s[len("tuple"):]
    base, is_array, length = _peel_array_suffix(s)
    if is_array:
        return TypeDesc("array", elem=parse_abi_type(base), length=length)
    if s.startswith("(") and s.endswith(")"):
        return TypeDesc("tuple", components=tuple(parse_abi_type(p) for p in _split_top(s[1:-1])))
    m = _ABI_INT.match(s)
    if m:
        bits = int(m.group(2) or 256)
        if bits % 8 or not 8 <= bits <= 256:
            raise ValueError(f"bad integer width in {s!r}")
        return TypeDesc("uint" if m.group(1) == "uint" else "int", size=bits)
    m = _ABI_FBYTES.match(s)
    if m:
        n = int(m.group(1))
        if not 1 <= n <= 32:
            raise ValueError(f"bad fixed bytes width in {s!r}")
        return TypeDesc("fbytes", size=n)
    if s in ("bool", "address", "bytes", "string"):
        return TypeDesc(s)
    # function types, mappings, fixed-point, struct/enum names
    raise UnsupportedType(s)


_BORSH_INT = re.compile(r"^([ui])(8|16|32|64|128|256)$")
_BORSH_FIXED_ARR = re.compile(r"^\[(.+);\s*(\d+)\]$")


def parse_borsh_type(s: str) -> TypeDesc:
    s = s.strip()
    m = _BORSH_INT.match(s)
    if m:
        return TypeDesc("uint" if m.group(1) == "u" else "int", size=int(m.group(2)))
    if s.startswith("vec<") and s.endswith(">"):
        return TypeDesc("array", elem=parse_borsh_type(s[4:-1]), length=None)
    m = _BORSH_FIXED_ARR.match(s)
    if m:
        return TypeDesc("array", elem=parse_borsh_type(m.group(1)), length=int(m.group(2)))
    if s.startswith("(") and s.endswith(")"):
        return TypeDesc("tuple", components=tuple(parse_borsh_type(p) for p in _split_top(s[1:-1])))
    m = _ABI_FBYTES.match(s)
    if m:
        return TypeDesc("fbytes", size=int(m.group(1)))
    if s in ("bool", "address", "bytes", "string"):
        return TypeDesc(s)
    raise ValueError(f"unknown Borsh type {s!r}")


def _as_desc(t, parser) -> TypeDesc:
    return t if isinstance(t, TypeDesc) else parser(t)


def abi_type_str(t: TypeDesc) -> str:
    if t.kind == "uint":
        return f"uint{t.size}"
    if t.kind == "int":
        return f"int{t.size}"
    if t.kind == "fbytes":
        return f"bytes{t.size}"
    if t.kind == "array":
        return abi_type_str(t.elem) + (f"[{t.length}]" if t.length is not None else "[]")
    if t.kind == "tuple":
        return "(" + ",".join(abi_type_str(c) for c in t.components) + ")"
    return t.kind


_BORSH_WIDTHS = (8, 16, 32, 64, 128, 256)


def abi_to_borsh(t: TypeDesc) -> TypeDesc:
    """Fixed ABI -> Borsh descriptor table: ``uintN`` -> smallest ``uM`` with M >= N."""
    if t.kind in ("uint", "int"):
        return TypeDesc(t.kind, size=next(w for w in _BORSH_WIDTHS if w >= t.size))
    if t.kind == "array":
        return TypeDesc("array", elem=abi_to_borsh(t.elem), length=t.length)
    if t.kind == "tuple":
        return TypeDesc("tuple", components=tuple(abi_to_borsh(c) for c in t.components))
    return t


def borsh_type_str(t: TypeDesc) -> str:
    if t.kind in ("uint", "int"):
        return ("u" if t.kind == "uint" else "i") + str(t.size)
    if t.kind == "fbytes":
        return f"bytes{t.size}"
    if t.kind == "array":
        inner = borsh_type_str(t.elem)
        return f"vec<{inner}>" if t.length is None else f"[{inner}; {t.length}]"
    if t.kind == "tuple":
        return "(" + ",".join(borsh_type_str(c) for c in t.components) + ")"
    return t.kind


# --------------------------------------------------------------------------
# ABI
# --------------------------------------------------------------------------

WORD = 32


# Zero-width elements (``T[0]``, empty tuples) consume no input, so the
# remaining-bytes bound cannot cap their count; use a fixed ceiling instead.
MAX_ZERO_WIDTH_ITEMS = 4096


def _too_long(n: int, elem_size: int, remaining: int) -> bool:
    if elem_size == 0:
        return n > MAX_ZERO_WIDTH_ITEMS
    return n * elem_size > remaining


def _is_dynamic(t: TypeDesc) -> bool:
    if t.kind in ("bytes", "string"):
        return True
    if t.kind == "array":
        return t.length is None or _is_dynamic(t.elem)
    if t.kind == "tuple":
        return any(_is_dynamic(c) for c in t.components)
    return False


def _head_size(t: TypeDesc) -> int:
    if _is_dynamic(t):
        return WORD
    if t.kind == "array":
        return t.length * _head_size(t.elem)
    if t.kind == "tuple":
        return sum(_head_size(c) for c in t.components)
    return WORD


def _check_int(t: TypeDesc, v, signed: bool) -> int:
    want = Int if signed else UInt
    if not isinstance(v, want):
        raise EncodeError(f"expected {want.__name__} for {abi_type_str(t)}, got {v!r}")
    n = v.value
    if signed:
        lo, hi = -(1 << (t.size - 1)), (1 << (t.size - 1)) - 1
    else:
        lo, hi = 0, (1 << t.size) - 1
    if not lo <= n <= hi:
        raise EncodeError(f"{n} out of range for {t.kind}{t.size}")
    return n


def _pad_right(b: bytes) -> bytes:
    return b + b"\x00" * (-len(b) % WORD)


def _abi_encode_one(t: TypeDesc, v) -> bytes:
    k = t.kind
    if k == "uint":
        return _check_int(t, v, False).to_bytes(WORD, "big")
    if k == "int":
        return _check_int(t, v, True).to_bytes(WORD, "big", signed=True)
    if k == "bool":
        if not isinstance(v, Bool):
            raise EncodeError(f"expected Bool, got {v!r}")
        return (1 if v.value else 0).to_bytes(WORD, "big")
    if k == "address":
        if not isinstance(v, Address):
            raise EncodeError(f"expected Address, got {v!r}")
        return b"\x00" * 12 + v.value
    if k == "fbytes":
        if not isinstance(v, Bytes) or len(v.value) != t.size:
            raise EncodeError(f"expected {t.size}-byte Bytes, got {v!r}")
        return _pad_right(v.value)
    if k == "bytes":
        if not isinstance(v, Bytes):
            raise EncodeError(f"expected Bytes, got {v!r}")
        return len(v.value).to_bytes(WORD, "big") + _pad_right(v.value)
    if k == "string":
        if not isinstance(v, Str):
            raise EncodeError(f"expected Str, got {v!r}")
        raw = v.value.encode("utf-8")
        return len(raw).to_bytes(WORD, "big") + _pad_right(raw)
    if k == "array":
        if not isinstance(v, Array):
            raise EncodeError(f"expected Array, got {v!r}")
        if t.length is not None and len(v.items) != t.length:
            raise EncodeError(f"expected {t.length} elements, got {len(v.items)}")
        body = _abi_encode_seq([t.elem] * len(v.items), v.items)
        if t.length is None:
            return len(v.items).to_bytes(WORD, "big") + body
        return body
    if k == "tuple":
        if not isinstance(v, Tuple) or len(v.items) != len(t.components):
            raise EncodeError(f"expected {len(t.components)}-tuple, got {v!r}")
        return _abi_encode_seq(t.components, v.items)
    raise EncodeError(f"cannot encode kind {k}")


def _abi_encode_seq(types: Sequence[TypeDesc], values: Sequence) -> bytes:
    heads, tails = [], []
    head_len = sum(_head_size(t) for t in types)
    tail_off = head_len
    for t, v in zip(types, values):
        enc = _abi_encode_one(t, v)
        if _is_dynamic(t):
            heads.append(tail_off.to_bytes(WORD, "big"))
            tails.append(enc)
            tail_off += len(enc)
        else:
            heads.append(enc)
    return b"".join(heads) + b"".join(tails)


def encode_abi(value: CanonicalValue, types: Iterable) -> bytes:
    """ABI-encode ``value`` (a Tuple aligned with ``types``)."""
    descs = [_as_desc(t, parse_abi_type) for t in types]
    if not isinstance(value, Tuple) or len(value.items) != len(descs):
        raise EncodeError(f"expected a {len(descs)}-tuple, got {value!r}")
    return _abi_encode_seq(descs, value.items)


class _AbiReader:
    def __init__(self, data: bytes):
        self.data = data
        self.high = 0  # furthest byte consumed, for trailing-data detection

    def word(self, pos: int) -> bytes:
        if pos < 0 or pos + WORD > len(self.data):
            raise DecodeError(f"read of word at {pos} past end of {len(self.data)}-byte input")
        self.high = max(self.high, pos + WORD)
        return self.data[pos : pos + WORD]

    def span(self, pos: int, n: int) -> bytes:
        padded = n + (-n % WORD)
        if pos < 0 or pos + padded > len(self.data):
            raise DecodeError(f"{n}-byte payload at {pos} runs past end of input")
        self.high = max(self.high, pos + padded)
        chunk = self.data[pos : pos + padded]
        if any(chunk[n:]):
            raise DecodeError("non-zero padding after dynamic payload")
        return chunk[:n]

    def offset(self, pos: int, base: int) -> int:
        off = int.from_bytes(self.word(pos), "big")
        target = base + off
        # a zero-length static array of dynamic items may point at end-of-data
        if target > len(self.data):
            raise DecodeError(f"offset {off} out of range")
        return target


def _abi_decode_one(r: _AbiReader, t: TypeDesc, pos: int):
    k = t.kind
    if k == "uint":
        n = int.from_bytes(r.word(pos), "big")
        if n >> t.size:
            raise DecodeError(f"value does not fit uint{t.size}")
        return UInt(n)
    if k == "int":
        n = int.from_bytes(r.word(pos), "big", signed=True)
        if not -(1 << (t.size - 1)) <= n < (1 << (t.size - 1)):
            raise DecodeError(f"value does not fit int{t.size}")
        return Int(n)
    if k == "bool":
        n = int.from_bytes(r.word(pos), "big")
        if n not in (0, 1):
            raise DecodeError(f"bool word holds {n}")
        return Bool(n == 1)
    if k == "address":
        w = r.word(pos)
        if any(w[:12]):
            raise DecodeError("non-zero address padding")
        return Address(w[12:])
    if k == "fbytes":
        w = r.word(pos)
        if any(w[t.size :]):
            raise DecodeError(f"non-zero padding in bytes{t.size}")
        return Bytes(w[: t.size])
    if k in ("bytes", "string"):
        n = int.from_bytes(r.word(pos), "big")
        if n > len(r.data) - pos - WORD:
            raise DecodeError(f"length {n} exceeds remaining input")
        raw = r.span(pos + WORD, n)
        if k == "bytes":
            return Bytes(raw)
        try:
            return Str(raw.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise DecodeError(f"string is not UTF-8: {e}") from None
    if k == "array":
        if t.length is None:
            n = int.from_bytes(r.word(pos), "big")
            remaining = len(r.data) - pos - WORD
            if _too_long(n, _head_size(t.elem), remaining):
                raise DecodeError(f"array length {n} exceeds remaining input")
            items = _abi_decode_seq(r, [t.elem] * n, pos + WORD)
        else:
            items = _abi_decode_seq(r, [t.elem] * t.length, pos)
        return Array(items)
    if k == "tuple":
        return Tuple(_abi_decode_seq(r, t.components, pos))
    raise DecodeError(f"cannot decode kind {k}")


def _abi_decode_seq(r: _AbiReader, types: Sequence[TypeDesc], base: int) -> tuple:
    out, pos = [], base
    for t in types:
        if _is_dynamic(t):
            out.append(_abi_decode_one(r, t, r.offset(pos, base)))
        else:
            out.append(_abi_decode_one(r, t, pos))
        pos += _head_size(t)
    return tuple(out)


def decode_abi(data: bytes, types: Iterable, strict: bool = True) -> Tuple:
    """Head/tail ABI decoding of ``data`` into a Tuple aligned with ``types``."""
    descs = [_as_desc(t, parse_abi_type) for t in types]
    r = _AbiReader(bytes(data))
    head = sum(_head_size(t) for t in descs)
    if head > len(r.data):
        raise DecodeError(f"input of {len(r.data)} bytes shorter than {head}-byte head")
    items = _abi_decode_seq(r, descs, 0)
    if strict and len(r.data) > max(r.high, head):
        raise DecodeError(f"{len(r.data) - max(r.high, head)} trailing bytes")
    return Tuple(items)


# --------------------------------------------------------------------------
# Borsh
# --------------------------------------------------------------------------

DEFAULT_ADDRESS_WIDTH = 20


def _borsh_encode_one(t: TypeDesc, v, address_width: int) -> bytes:
    k = t.kind
    if k in ("uint", "int"):
        if t.size not in _BORSH_WIDTHS:
            raise EncodeError(f"Borsh has no {t.size}-bit integer")
        n = _check_int(t, v, k == "int")
        return n.to_bytes(t.size // 8, "little", signed=(k == "int"))
    if k == "bool":
        if not isinstance(v, Bool):
            raise EncodeError(f"expected Bool, got {v!r}")
        return b"\x01" if v.value else b"\x00"
    if k == "address":
        if not isinstance(v, Address):
            raise EncodeError(f"expected Address, got {v!r}")
        return b"\x00" * (address_width - 20) + v.value
    if k == "fbytes":
        if not isinstance(v, Bytes) or len(v.value) != t.size:
            raise EncodeError(f"expected {t.size}-byte Bytes, got {v!r}")
        return v.value
    if k == "bytes":
        if not isinstance(v, Bytes):
            raise EncodeError(f"expected Bytes, got {v!r}")
        return len(v.value).to_bytes(4, "little") + v.value
    if k == "string":
        if not isinstance(v, Str):
            raise EncodeError(f"expected Str, got {v!r}")
        raw = v.value.encode("utf-8")
        return len(raw).to_bytes(4, "little") + raw
    if k == "array":
        if not isinstance(v, Array):
            raise EncodeError(f"expected Array, got {v!r}")
        if t.length is not None and len(v.items) != t.length:
            raise EncodeError(f"expected {t.length} elements, got {len(v.items)}")
        body = b"".join(_borsh_encode_one(t.elem, x, address_width) for x in v.items)
        return body if t.length is not None else len(v.items).to_bytes(4, "little") + body
    if k == "tuple":
        if not isinstance(v, Tuple) or len(v.items) != len(t.components):
            raise EncodeError(f"expected {len(t.components)}-tuple, got {v!r}")
        return b"".join(_borsh_encode_one(c, x, address_width) for c, x in zip(t.components, v.items))
    raise EncodeError(f"cannot encode kind {k}")


def encode_borsh(value: CanonicalValue, schema: Iterable, address_width: int = DEFAULT_ADDRESS_WIDTH) -> bytes:
    descs = [_as_desc(t, parse_borsh_type) for t in schema]
    if not isinstance(value, Tuple) or len(value.items) != len(descs):
        raise EncodeError(f"expected a {len(descs)}-tuple, got {value!r}")
    return b"".join(_borsh_encode_one(t, v, address_width) for t, v in zip(descs, value.items))


def _min_size(t: TypeDesc, address_width: int) -> int:
    k = t.kind
    if k in ("uint", "int"):
        return t.size // 8
    if k == "bool":
        return 1
    if k == "address":
        return address_width
    if k == "fbytes":
        return t.size
    if k in ("bytes", "string"):
        return 4
    if k == "array":
        return 4 if t.length is None else t.length * _min_size(t.elem, address_width)
    return sum(_min_size(c, address_width) for c in t.components)


class _BorshReader:
    def __init__(self, data: bytes, address_width: int):
        self.data = data
        self.pos = 0
        self.address_width = address_width

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"short read: need {n} bytes at {self.pos}, have {len(self.data) - self.pos}")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def length_prefix(self, elem_min: int) -> int:
        n = int.from_bytes(self.take(4), "little")
        if _too_long(n, elem_min, len(self.data) - self.pos):
            raise DecodeError(f"length prefix {n} exceeds remaining input")
        return n

    def read(self, t: TypeDesc):
        k = t.kind
        if k in ("uint", "int"):
            if t.size not in _BORSH_WIDTHS:
                raise DecodeError(f"Borsh has no {t.size}-bit integer")
            n = int.from_bytes(self.take(t.size // 8), "little", signed=(k == "int"))
            return UInt(n) if k == "uint" else Int(n)
        if k == "bool":
            b = self.take(1)[0]
            if b not in (0, 1):
                raise DecodeError(f"invalid bool byte {b:#x}")
            return Bool(b == 1)
        if k == "address":
            raw = self.take(self.address_width)
            pad = self.address_width - 20
            if pad < 0 or any(raw[:pad]):
                raise DecodeError("address does not fit 20 bytes")
            return Address(raw[pad:])
        if k == "fbytes":
            return Bytes(self.take(t.size))
        if k in ("bytes", "string"):
            raw = self.take(self.length_prefix(1))
            if k == "bytes":
                return Bytes(raw)
            try:
                return Str(raw.decode("utf-8"))
            except UnicodeDecodeError as e:
                raise DecodeError(f"string is not UTF-8: {e}") from None
        if k == "array":
            n = t.length if t.length is not None else self.length_prefix(_min_size(t.elem, self.address_width))
            return Array(tuple(self.read(t.elem) for _ in range(n)))
        if k == "tuple":
            return Tuple(tuple(self.read(c) for c in t.components))
        raise DecodeError(f"cannot decode kind {k}")


def decode_borsh(
    data: bytes, schema: Iterable, strict: bool = True, address_width: int = DEFAULT_ADDRESS_WIDTH
) -> Tuple:
    descs = [_as_desc(t, parse_borsh_type) for t in schema]
    r = _BorshReader(bytes(data), address_width)
    out = Tuple(tuple(r.read(t) for t in descs))
    if strict and r.pos != len(r.data):
        raise DecodeError(f"{len(r.data) - r.pos} trailing bytes")
    return out


# --------------------------------------------------------------------------
# return-type inference and output normalization
# --------------------------------------------------------------------------


def _abi_param_type(p: dict) -> str:
    ty = p["type"]
    if ty.startswith("tuple"):
        inner = "(" + ",".join(_abi_param_type(c) for c in p.get("components", [])) + ")"
        return inner + ty[len("tuple"):]
    return ty


def infer_types(abi, entry: Entry) -> list:
    """Return-type descriptors of ``entry.function`` from an ABI document.

    ``abi`` is the compiler's ABI JSON (text or already-parsed list). The
    contract name is not part of a per-contract ABI file and is only used
    in error messages.
    """
    if isinstance(abi, (str, bytes)):
        abi = json.loads(abi)
    for item in abi:
        if item.get("type", "function") == "function" and item.get("name") == entry.function:
            return [parse_abi_type(_abi_param_type(o)) for o in item.get("outputs", [])]
    raise MetadataError(f"{entry.contract}.{entry.function} not found in ABI")


def normalize(
    outcome: ExecOutcome, types: Optional[Sequence[TypeDesc]], encoding: str, address_width: int = DEFAULT_ADDRESS_WIDTH
) -> ExecOutcome:
    """Attach the decoded value to a successful execution, if decodable.

    A DecodeError leaves ``decoded`` empty; the oracle then treats the
    pair as incomparable instead of reporting an output mismatch.
    """
    if not outcome.ok or types is None or encoding == "none":
        return outcome
    try:
        if encoding == "abi":
            value = decode_abi(outcome.raw_output, types)
        elif encoding == "borsh":
            value = decode_borsh(outcome.raw_output, [abi_to_borsh(t) for t in types], address_width=address_width)
        else:
            raise ValueError(f"unknown output encoding {encoding!r}")
    except DecodeError:
        return outcome
    return replace(outcome, decoded=value)


def encode_for(value: Tuple, types: Sequence[TypeDesc], encoding: str, address_width: int = DEFAULT_ADDRESS_WIDTH) -> bytes:
    if encoding == "abi":
        return encode_abi(value, types)
    if encoding == "borsh":
        return encode_borsh(value, [abi_to_borsh(t) for t in types], address_width=address_width)
    raise ValueError(f"cannot encode for {encoding!r}")


def zero_value(t: TypeDesc):
    k = t.kind
    if k == "uint":
        return UInt(0)
    if k == "int":
        return Int(0)
    if k == "bool":
        return Bool(False)
    if k == "address":
        return Address(b"\x00" * 20)
    if k == "fbytes":
        return Bytes(b"\x00" * t.size)
    if k == "bytes":
        return Bytes(b"")
    if k == "string":
        return Str("")
    if k == "array":
        return Array(tuple(zero_value(t.elem) for _ in range(t.length or 0)))
    return Tuple(tuple(zero_value(c) for c in t.components))


def coerce_value(t: TypeDesc, raw) -> CanonicalValue:
    """Build a canonical value from plain JSON data under descriptor ``t``."""
    k = t.kind
    if k == "uint":
        return UInt(int(raw))
    if k == "int":
        return Int(int(raw))
    if k == "bool":
        return Bool(bool(raw))
    if k == "address":
        return Address(bytes.fromhex(str(raw).removeprefix("0x").rjust(40, "0")))
    if k in ("fbytes", "bytes"):
        return Bytes(bytes.fromhex(str(raw).removeprefix("0x")))
    if k == "string":
        return Str(str(raw))
    if k == "array":
        return Array(tuple(coerce_value(t.elem, x) for x in raw))
    return Tuple(tuple(coerce_value(c, x) for c, x in zip(t.components, raw)))
