import itertools
import random

import networkx as nx
import pytest

from popcheck.cycles import (
    ConflictClass, GranularityClass, PopCycle, check_consistency, classify, enumerate_cycles,
    find_cycle, has_cycle, is_distributed_anomaly, reduce_cycle, reduce_single_object,
)
from popcheck.pops import Pop, PopGraph, PopType, build_graph, extract_pops
from popcheck.schedule import parse_schedule
from schedgen import has_cycle_closure, random_cyclic, random_schedule

S1 = "R1[x0] R3[x0] W1[y1] R3[y1] C3 W2[x1] R1[y1] A1"
S3 = "R1[x0] W2[y1] W2[x1] R1[y1]"
S4 = "R1[x0] W2[y1] W2[x1] C2 R1[y1]"


def cyc(s):
    return find_cycle(build_graph(parse_schedule(s)))


def test_find_cycle_s1_is_dirty_read():
    c = cyc(S1)
    assert [e.label() for e in c.edges] == ["W1R3[y]", "R3A1[y]"]
    assert c.txns == (1, 3)


def test_find_cycle_empty_and_s3():
    assert find_cycle(PopGraph((), ())) is None
    c = cyc(S3)
    assert sorted((e.type.value, e.obj) for e in c.edges) == [("RW", "x"), ("WR", "y")]


def test_find_cycle_is_deterministic():
    s = "W1[x1] W2[x2] W3[x3] W1[y1] W3[y2] W2[y3] R1[z0] W3[z1]"
    assert str(cyc(s)) == str(cyc(s))


def _edge(t, a, b, o="x"):
    return Pop(PopType(t), a, b, o, (a, b))


def test_enumerate_examples():
    assert enumerate_cycles(build_graph(parse_schedule("W1[x1] C1 R2[x1] C2"))) == []
    assert len(enumerate_cycles(build_graph(parse_schedule(S1)))) == 1
    g = PopGraph((1, 2, 3), (_edge("WW", 1, 2), _edge("WW", 2, 3), _edge("WW", 3, 1), _edge("RW", 2, 1)))
    assert len(enumerate_cycles(g)) == 2


def test_enumerate_cap_reports_truncation():
    g = PopGraph((1, 2, 3, 4), tuple(_edge("WW", a, b) for a in range(1, 5) for b in range(1, 5) if a != b))
    got = enumerate_cycles(g, max=3)
    assert len(got) == 3 and got.truncated
    assert not enumerate_cycles(g, max=1000).truncated


def test_enumerate_matches_networkx_simple_cycles():
    rng = random.Random(5)
    for _ in range(400):
        s = random_schedule(rng, max_txns=4, max_objs=2, max_ops=10)
        g = build_graph(s)
        ours = {tuple(c.txns) for c in enumerate_cycles(g, max=10_000)}
        d = nx.DiGraph(list(g.edge_pairs()))
        theirs = set()
        for c in nx.simple_cycles(d):
            k = c.index(min(c))
            theirs.add(tuple(c[k:] + c[:k]))
        assert ours == theirs, str(s)


def test_popcycle_rejects_non_cycles():
    with pytest.raises(ValueError):
        PopCycle((_edge("WW", 1, 2), _edge("WW", 3, 1)))
    with pytest.raises(ValueError):
        PopCycle(())


@pytest.mark.parametrize("text,expected", [
    ("R1[x0] W2[x1] W2[y1] R1[y1]", (ConflictClass.RAT, GranularityClass.DDA)),   # read skew
    ("W1[x1] W2[x2] C1", (ConflictClass.WAT, GranularityClass.SDA)),               # dirty write
    ("R1[x0] W2[x1] R2[y0] W1[y1]", (ConflictClass.IAT, GranularityClass.DDA)),   # write skew
    (S4, (ConflictClass.IAT, GranularityClass.DDA)),                              # WCR is not WR
])
def test_classify_examples(text, expected):
    assert classify(cyc(text)) == expected


def test_classify_totality():
    rng = random.Random(9)
    for s, c in random_cyclic(rng, 500):
        conflict, gran = classify(c)
        types = {t.value for t in c.types}
        assert (conflict is ConflictClass.RAT) == ("WR" in types)
        assert (conflict is ConflictClass.WAT) == ("WR" not in types and "WW" in types)
        if gran is GranularityClass.SDA:
            assert c.n_t == 2 and c.n_obj == 1


def test_reduce_single_object_ww_chain():
    s = parse_schedule("W1[x1] W2[x2] W3[x3] R1[x3]")
    c = PopCycle(tuple(e for e in (
        next(p for p in extract_pops(s) if p.key == ("WW", 1, 2, "x")),
        next(p for p in extract_pops(s) if p.key == ("WW", 2, 3, "x")),
        next(p for p in extract_pops(s) if p.key == ("WR", 3, 1, "x")),
    )))
    r = reduce_single_object(c, s)
    assert r.n_t == 2 and set(r.txns) <= {1, 2, 3}
    assert set(r.edges) <= extract_pops(s)


def test_reduce_single_object_precondition():
    c = cyc(S3)
    with pytest.raises(ValueError):
        reduce_single_object(c, parse_schedule(S3))


def test_reduce_cycle_leaves_minimal_cycles():
    s = parse_schedule(S3)
    c = cyc(S3)
    assert reduce_cycle(c, s) == c


def test_reduce_cycle_four_transaction_example():
    # R1W2[x], R2C2W3[y], R3C3W4[x], R4W1[x] with R3 before W2 on x
    s = parse_schedule("R1[x0] R4[x0] R3[x0] R2[y0] W2[x1] C2 W3[y1] C3 W4[x2] W1[x3]")
    pops = {p.key: p for p in extract_pops(s)}
    four = PopCycle((pops["RW", 1, 2, "x"], pops["RCW", 2, 3, "y"],
                     pops["RCW", 3, 4, "x"], pops["RW", 4, 1, "x"]))
    r = reduce_cycle(four, s)
    assert r.n_t == 2 and set(r.txns) == {2, 3}
    assert {e.key for e in r.edges} == {("RCW", 2, 3, "y"), ("RW", 3, 2, "x")}


def _two_subset_cycle(s, txns, obj) -> bool:
    """Exhaustive oracle: some pair of the cycle's transactions forms a 2-cycle on obj."""
    pairs = {(p.src, p.dst) for p in extract_pops(s) if p.obj == obj}
    return any((a, b) in pairs and (b, a) in pairs for a, b in itertools.combinations(txns, 2))


def _per_object_ok(c) -> bool:
    by = {}
    for m, e in enumerate(c.edges):
        by.setdefault(e.obj, []).append(m)
    for pos in by.values():
        if len(pos) > 2:
            return False
        if len(pos) == 2 and c.n_t > 2 and (pos[1] - pos[0]) % c.n_t not in (1, c.n_t - 1):
            return False
    return True


def test_reduction_properties_random():
    rng = random.Random(21)
    for s, c in random_cyclic(rng, 1500, max_txns=7, max_objs=3, max_ops=16):
        pops = extract_pops(s)
        r = reduce_cycle(c, s)
        assert set(r.edges) <= pops
        assert r.n_t <= 2 * c.n_obj
        assert _per_object_ok(r)
        if c.n_obj == 1:
            r1 = reduce_single_object(c, s)
            assert r1.n_t == 2 and set(r1.edges) <= pops
            assert _two_subset_cycle(s, c.txns, c.objects[0])


@pytest.mark.parametrize("text,expected", [
    (S3, "Anomaly: RAT/DDA, matches #11 Read Skew"),
    ("W1[x1] C1 R2[x1] C2", "Consistent"),
    (S4, "Anomaly: IAT/DDA, matches #29 Read Skew Committed"),
])
def test_check_consistency_examples(text, expected):
    assert check_consistency(parse_schedule(text)).summary() == expected


def test_checker_agrees_with_closure_oracle():
    rng = random.Random(33)
    for _ in range(3000):
        s = random_schedule(rng, max_txns=5, max_objs=3, max_ops=14)
        g = build_graph(s)
        v = check_consistency(s)
        assert v.is_anomaly == has_cycle_closure(g.edge_pairs(), g.vertices) == has_cycle(g)
        if v.consistent:
            assert v.matches == []


def test_verdict_record():
    rec = check_consistency(parse_schedule(S4)).to_record()
    assert rec["consistent"] is False and rec["matches"] == [29]
    assert rec["cycle"] == ["RW 1 2 x", "WCR 2 1 y"]
    assert check_consistency(parse_schedule("")).to_record() == {"consistent": True}


def test_is_distributed_anomaly():
    ws = cyc("R1[x0] W2[x1] R2[y0] W1[y1]")
    assert is_distributed_anomaly(ws, {"x": 0, "y": 1})
    assert not is_distributed_anomaly(cyc("W1[x1] R2[x1] A1"), {"x": 0})
    assert not is_distributed_anomaly(cyc(S3), {"x": 0, "y": 0})
    with pytest.raises(KeyError):
        is_distributed_anomaly(ws, {"x": 0})
