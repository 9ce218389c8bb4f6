import itertools
import random

import pytest
from hypothesis import given, settings

from popcheck.schedule import (
    A, C, R, W, OpKind, Operation, Schedule, ScheduleError, equivalent, format_schedule,
    parse_schedule, precedes, validate, version_order,
)
from schedgen import random_schedule, schedules

S1 = "R1[x0] R3[x0] W1[y1] R3[y1] C3 W2[x1] R1[y1] A1"
S2 = "R1[x0] W2[x1] W2[y1] R1[y1]"
S3 = "R1[x0] W2[y1] W2[x1] R1[y1]"
S4 = "R1[x0] W2[y1] W2[x1] C2 R1[y1]"


def test_parse_s1_states():
    s = parse_schedule(S1)
    assert s.txns == (1, 2, 3)
    assert (s.state(1), s.state(2), s.state(3)) == ("aborted", "active", "committed")
    assert s.objects == ("x", "y")
    assert len(s) == 8


def test_parse_empty():
    s = parse_schedule("")
    assert len(s) == 0 and s.txns == ()


def test_version_inference_matches_explicit():
    assert parse_schedule("W1[x] R2[x] A1") == parse_schedule("W1[x1] R2[x1] A1")
    assert str(parse_schedule("W1[x] W2[x] R1[x] R2[y]")) == "W1[x1] W2[x2] R1[x2] R2[y0]"


def test_explicit_old_version_read_is_kept():
    s = parse_schedule("R1[y0] W2[y1] R1[y0]")
    assert [op.version for op in s] == [0, 1, 0]


@pytest.mark.parametrize("text,pos", [
    ("R1[x0] Q2", 1),
    ("R1[x]] C1", 0),
    ("W1[x2]", 0),             # contradicts inferred version 1
    ("R1[x1]", 0),             # version 1 does not exist yet
    ("R0[x0]", 0),             # txn ids are 1-based
    ("C1 R1[x0]", 0),          # terminal-not-last
    ("R1[x0] C1 A1", 2),       # duplicate terminal
])
def test_parse_errors_report_position(text, pos):
    with pytest.raises(ScheduleError) as e:
        parse_schedule(text)
    assert e.value.position == pos


def test_object_names_may_hold_digits_inside():
    s = parse_schedule("W1[acct_2b] R2[acct_2b1]")
    assert s.ops[1].obj == "acct_2b" and s.ops[1].version == 1


def test_format_examples():
    assert format_schedule(Schedule()) == ""
    assert format_schedule(parse_schedule("W1[x1] C1")) == "W1[x1] C1"


@settings(max_examples=300, deadline=None)
@given(schedules(max_txns=5, max_objs=3, max_ops=14))
def test_round_trip(s):
    assert parse_schedule(format_schedule(s)) == s


def test_round_trip_s1():
    s = parse_schedule(S1)
    assert parse_schedule(format_schedule(s)) == s


def test_validate_examples():
    assert validate(parse_schedule(S1)) == []
    v = validate(parse_schedule("C1 R1[x0]", strict=False))
    assert [(x.kind, x.txn) for x in v] == [("terminal-not-last", 1)]
    v = validate(parse_schedule("R1[x0] C1 A1", strict=False))
    assert [(x.kind, x.txn, x.index) for x in v] == [("duplicate-terminal", 1, 2)]


def test_validate_flags_bad_versions():
    s = Schedule((W(1, "x", 1), W(2, "x", 3), R(1, "y", 2)))
    kinds = [v.kind for v in validate(s)]
    assert kinds == ["write-version", "nonexistent-version"]


def test_operation_invariants():
    with pytest.raises(ValueError):
        Operation(OpKind.COMMIT, 1, "x")
    with pytest.raises(ValueError):
        Operation(OpKind.READ, 1, "x")
    with pytest.raises(ValueError):
        Operation(OpKind.WRITE, 0, "x", 1)


def test_reference_writer_always_validates():
    rng = random.Random(7)
    for _ in range(2000):
        s = random_schedule(rng)
        assert validate(s) == []
        for o in s.objects:
            ws = [op.version for op in s if op.is_write and op.obj == o]
            assert ws == list(range(1, len(ws) + 1))


def test_version_order_s1_x():
    s = parse_schedule(S1)
    vo = version_order(s, "x")
    assert [str(op) for op in vo.operations(s)] == ["R1[x0]", "R3[x0]", "W2[x1]"]
    assert vo.pairs == {(0, 5), (1, 5)}


def test_version_order_s1_y():
    s = parse_schedule(S1)
    vo = version_order(s, "y")
    assert [str(op) for op in vo.operations(s)] == ["W1[y1]", "R3[y1]", "R1[y1]"]
    assert vo.pairs == {(2, 3), (2, 6)}


def test_version_order_single_and_unknown():
    s = parse_schedule("R1[x0] W2[y1]")
    assert version_order(s, "x").pairs == frozenset()
    with pytest.raises(KeyError):
        version_order(s, "z")


def test_precedes_uses_versions():
    assert precedes(W(1, "x", 1), R(2, "x", 1))
    assert not precedes(W(2, "x", 2), R(1, "x", 1))
    assert precedes(R(1, "x", 1), W(2, "x", 2))
    assert not precedes(R(1, "x", 0), R(2, "x", 0))
    assert not precedes(W(1, "x", 1), W(2, "y", 2))


def test_equivalence_examples():
    s2, s3, s4 = map(parse_schedule, (S2, S3, S4))
    assert equivalent(s2, s3)
    assert not equivalent(s3, s4)
    assert equivalent(s4, s4)


def test_equivalence_sees_terminal_side():
    # same ops and version order, but T2 commits before vs after R1[y1]
    a = parse_schedule("R1[x0] W2[y1] W2[x1] C2 R1[y1]")
    b = parse_schedule("R1[x0] W2[y1] W2[x1] R1[y1] C2")
    assert not equivalent(a, b)


def _valid_permutations(s: Schedule):
    out = []
    for perm in set(itertools.permutations(s.ops)):
        cand = Schedule(perm)
        if not validate(cand):
            out.append(cand)
    return out


def test_equivalence_is_an_equivalence_relation_brute_force():
    rng = random.Random(3)
    checked = 0
    while checked < 25:
        s = random_schedule(rng, max_txns=3, max_objs=2, max_ops=6)
        if len(s) < 3:
            continue
        perms = _valid_permutations(s)
        rel = {(i, j): equivalent(a, b) for i, a in enumerate(perms) for j, b in enumerate(perms)}
        n = len(perms)
        for i in range(n):
            assert rel[i, i]
            for j in range(n):
                assert rel[i, j] == rel[j, i]
                if rel[i, j]:
                    for k in range(n):
                        if rel[j, k]:
                            assert rel[i, k]
        checked += 1
