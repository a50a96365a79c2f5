import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import canonical_values, compiled, executed
from parityfuzz.types import (
    Address,
    Array,
    Bool,
    BoundaryCondition,
    CompileOutcome,
    CompileStatus,
    CoverageSnapshot,
    ExecOutcome,
    ExecStatus,
    FeatureTag,
    InconsistencyClass,
    InconsistencyRecord,
    Int,
    InvalidRecord,
    MutationRule,
    RuleKind,
    SeedProgram,
    ToolchainId,
    Tuple,
    UInt,
    canonical_equal,
    make_rule_id,
    strip_discriminator,
    value_from_json,
    value_to_json,
)

PROG = SeedProgram.from_source("contract C { function f() public returns (uint) { return 1; } }\n")
C, E = InconsistencyClass, ExecStatus


def _constructible(cls, base, other) -> bool:
    try:
        InconsistencyRecord(cls, base.toolchain, other.toolchain, PROG, base, other)
    except InvalidRecord:
        return False
    return True


@pytest.mark.parametrize("bs,os_", list(itertools.product(CompileStatus, CompileStatus)))
@pytest.mark.parametrize("bclear,oclear", [(False, False), (True, False), (False, True), (True, True)])
def test_compile_lattice(bs, os_, bclear, oclear):
    base, other = compiled("solc", bs, bclear), compiled("solang", os_, oclear)
    legal = set()
    if not base.ok and not other.ok and base.clear_error != other.clear_error:
        legal.add(C.EMI)
    if base.ok != other.ok:
        legal.add(C.CSI)
    got = {c for c in (C.EMI, C.CSI) if _constructible(c, base, other)}
    assert got == legal
    assert not _constructible(C.ESI, base, other)
    assert not _constructible(C.EOI, base, other)


@pytest.mark.parametrize("bs,os_", list(itertools.product(E, E)))
@pytest.mark.parametrize("equal", [True, False])
def test_exec_lattice(bs, os_, equal):
    base = executed("solc", bs, Tuple((UInt(2),)))
    other = executed("revive", os_, Tuple((UInt(2 if equal else 0),)))
    legal = set()
    if base.ok != other.ok:
        legal.add(C.ESI)
    if base.ok and other.ok and not equal:
        legal.add(C.EOI)
    assert {c for c in (C.ESI, C.EOI) if _constructible(c, base, other)} == legal
    assert not _constructible(C.CSI, base, other)


def test_canonical_equal_examples():
    assert not canonical_equal(UInt(2), UInt(0))
    assert canonical_equal(Tuple(()), Tuple(()))
    assert canonical_equal(Array((UInt(234), UInt(123))), Array((UInt(234), UInt(123))))
    assert not canonical_equal(UInt(5), Int(5))
    assert not canonical_equal(Tuple((UInt(1),)), Array((UInt(1),)))


@settings(max_examples=300)
@given(canonical_values(5), canonical_values(5), canonical_values(5))
def test_canonical_equal_is_equivalence(a, b, c):
    assert canonical_equal(a, a)
    assert canonical_equal(a, b) == canonical_equal(b, a)
    if canonical_equal(a, b) and canonical_equal(b, c):
        assert canonical_equal(a, c)


@given(canonical_values(5))
def test_value_json_roundtrip(v):
    assert canonical_equal(value_from_json(json.loads(json.dumps(value_to_json(v)))), v)


def test_value_guards():
    with pytest.raises(ValueError):
        UInt(-1)
    with pytest.raises(ValueError):
        Address(b"\x00" * 19)
    assert Bool(True) == Bool(True)


def _csi(other: str, stderr: str) -> InconsistencyRecord:
    base = compiled("solc")
    o = CompileOutcome(ToolchainId(other), CompileStatus.FAILURE, stderr=stderr)
    return InconsistencyRecord(C.CSI, base.toolchain, o.toolchain, PROG, base, o)


def test_dedup_key_strips_locations():
    a = _csi("solang", "thread 'main' panicked at 'not implemented', /home/a/solang/src/sema/types.rs:1523:18")
    b = _csi("solang", "thread 'main' panicked at 'not implemented', /build/solang/src/sema/types.rs:88:3")
    assert a.dedup_key == b.dedup_key
    assert a.dedup_key == "CSI|solc|solang|failure:thread 'main' panicked at 'not implemented', <path>:<n>:<n>"


def test_dedup_key_includes_toolchain():
    assert _csi("solang", "boom").dedup_key != _csi("sold", "boom").dedup_key


def test_dedup_key_eoi_shapes():
    def eoi(x, y):
        b, o = executed("solc", value=Tuple((UInt(x),))), executed("solang", value=Tuple((UInt(y),)))
        return InconsistencyRecord(C.EOI, b.toolchain, o.toolchain, PROG, b, o)

    assert eoi(2, 0).dedup_key == eoi(7, 9).dedup_key == "EOI|solc|solang|Tuple(UInt)~Tuple(UInt)"


def test_strip_discriminator():
    assert strip_discriminator("\n  Error: bad 0xdeadBEEF at line 12 \nmore") == "Error: bad <hex> at line <n>"
    assert strip_discriminator("") == ""


def test_record_roundtrip_keeps_key_and_id():
    rec = _csi("solang", "panicked at src/x.rs:10")
    back = InconsistencyRecord.from_json(json.loads(json.dumps(rec.to_json())))
    assert back == rec
    assert back.dedup_key == rec.dedup_key and back.id == rec.id


def test_record_json_hex_prefix():
    rec = _csi("solang", "x")
    assert rec.to_json()["baseline_outcome"]["bytecode"].startswith("0x")


def test_compile_outcome_invariants():
    with pytest.raises(ValueError):
        CompileOutcome(ToolchainId("solc"), CompileStatus.SUCCESS)
    with pytest.raises(ValueError):
        CompileOutcome(ToolchainId("solc"), CompileStatus.FAILURE, bytecode=b"\x00")


def test_exec_outcome_success_needs_output():
    with pytest.raises(ValueError):
        ExecOutcome(ToolchainId("solc"), ExecStatus.SUCCESS)


def test_boundary_condition_implicit_iff_no_identifiers():
    BoundaryCondition("BC-1", "a.rs:1", "x as u8", "implicit")
    with pytest.raises(ValueError):
        BoundaryCondition("BC-1", "a.rs:1", "x", "implicit", ("panic",))
    with pytest.raises(ValueError):
        BoundaryCondition("BC-1", "a.rs:1", "x", "assertion", ())
    with pytest.raises(ValueError):
        BoundaryCondition("BC-1", "a.rs:1", "", "assertion", ("assert",))


def test_rule_action_closed_set():
    with pytest.raises(ValueError):
        MutationRule("SO-x", RuleKind.SYNTAX, FeatureTag("struct"), "delete", "d")


def test_rule_id_normalizes_description():
    a = make_rule_id(RuleKind.SYNTAX, "struct", "insert", "Add  a Field")
    assert a == make_rule_id(RuleKind.SYNTAX, "struct", "insert", "add a field")
    assert a.startswith("SO-")
    assert make_rule_id(RuleKind.BOUNDARY, "struct", "insert", "add a field", "BC-1").startswith("BO-")


@given(st.integers(0, 50), st.integers(0, 50))
def test_coverage_snapshot(a, b):
    covered, total = min(a, b), max(a, b)
    snap = CoverageSnapshot(covered, total)
    assert 0.0 <= snap.ratio <= 1.0
    assert CoverageSnapshot.from_json(snap.to_json()) == snap


def test_coverage_snapshot_rejects_overflow():
    with pytest.raises(ValueError):
        CoverageSnapshot(5, 4)


def test_toolchain_names():
    ToolchainId("mock:foo")
    with pytest.raises(ValueError):
        ToolchainId("gcc")
