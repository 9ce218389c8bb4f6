"""Cycle detection on POP graphs, anomaly verdicts and cycle reduction."""
from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .pops import Pop, PopGraph, PopType, build_graph, extract_pops
from .schedule import Schedule, precedes


class ConflictClass(enum.Enum):
    RAT = "RAT"
    WAT = "WAT"
    IAT = "IAT"


class GranularityClass(enum.Enum):
    SDA = "SDA"
    DDA = "DDA"
    MDA = "MDA"


@dataclass(frozen=True)
class PopCycle:
    """A simple directed cycle; ``edges[k].dst == edges[k+1].src``."""

    edges: tuple[Pop, ...]

    def __post_init__(self):
        edges = tuple(self.edges)
        if not edges:
            raise ValueError("empty cycle")
        srcs = [e.src for e in edges]
        if len(set(srcs)) != len(srcs):
            raise ValueError("cycle visits a transaction twice")
        for a, b in zip(edges, edges[1:] + edges[:1]):
            if a.dst != b.src:
                raise ValueError("edges do not chain into a cycle")
        # canonical rotation: start at the smallest transaction id
        k = srcs.index(min(srcs))
        object.__setattr__(self, "edges", edges[k:] + edges[:k])

    @property
    def txns(self) -> tuple[int, ...]:
        return tuple(e.src for e in self.edges)

    @property
    def objects(self) -> tuple[str, ...]:
        return tuple(sorted({e.obj for e in self.edges}))

    @property
    def n_t(self) -> int:
        return len(self.edges)

    @property
    def n_obj(self) -> int:
        return len(self.objects)

    @property
    def types(self) -> list[PopType]:
        return [e.type for e in self.edges]

    def __str__(self) -> str:
        return " -> ".join(e.label() for e in self.edges)


class Cycles(list):
    """List of cycles that remembers whether enumeration hit its cap."""

    truncated = False


def _out_edges(g: PopGraph) -> dict[int, list[Pop]]:
    out: dict[int, list[Pop]] = {v: [] for v in g.vertices}
    for e in sorted(g.edges, key=lambda e: (e.src, e.dst, e.obj, e.type.value)):
        out.setdefault(e.src, []).append(e)
    return out


def find_cycle(g: PopGraph) -> Optional[PopCycle]:
    out = _out_edges(g)
    color = {v: 0 for v in out}
    for root in sorted(out):
        if color[root]:
            continue
        # iterative DFS keeping the edge path to the current vertex
        path: list[Pop] = []
        on_path = {root: 0}
        stack = [(root, iter(out[root]))]
        color[root] = 1
        while stack:
            v, it = stack[-1]
            e = next(it, None)
            if e is None:
                color[v] = 2
                stack.pop()
                del on_path[v]
                if path:
                    path.pop()
                continue
            w = e.dst
            if color.get(w, 0) == 1:
                return PopCycle(tuple(path[on_path[w]:]) + (e,))
            if color.get(w, 0) == 0:
                color[w] = 1
                on_path[w] = len(path) + 1
                path.append(e)
                stack.append((w, iter(out.get(w, []))))
    return None


def enumerate_cycles(g: PopGraph, max: int = 1000) -> Cycles:
    """Simple cycles in a stable order, parallel edges expanded, at most ``max``."""
    if max < 1:
        raise ValueError("max must be at least 1")
    out = _out_edges(g)
    result = Cycles()
    for start in sorted(out):
        # vertex cycles whose smallest member is ``start``
        stack = [(start, [start])]
        vertex_cycles = []
        while stack:
            v, path = stack.pop()
            for w in sorted({e.dst for e in out.get(v, [])}, reverse=True):
                if w == start:
                    vertex_cycles.append(path)
                elif w > start and w not in path:
                    stack.append((w, path + [w]))
        vertex_cycles.sort()
        for vc in vertex_cycles:
            hops = list(zip(vc, vc[1:] + vc[:1]))
            choices = [[e for e in out[u] if e.dst == w] for u, w in hops]
            for combo in itertools.product(*choices):
                if len(result) >= max:
                    result.truncated = True
                    return result
                result.append(PopCycle(combo))
    return result


def has_cycle(g: PopGraph) -> bool:
    return find_cycle(g) is not None


def classify(c: PopCycle) -> tuple[ConflictClass, GranularityClass]:
    types = set(c.types)
    if PopType.WR in types:
        conflict = ConflictClass.RAT
    elif PopType.WW in types:
        conflict = ConflictClass.WAT
    else:
        conflict = ConflictClass.IAT
    if c.n_t == 2 and c.n_obj == 1:
        gran = GranularityClass.SDA
    elif c.n_t == 2 and c.n_obj == 2:
        gran = GranularityClass.DDA
    else:
        gran = GranularityClass.MDA
    return conflict, gran


# -- reduction ---------------------------------------------------------------

class _PopIndex:
    def __init__(self, s: Schedule):
        self.s = s
        self.by_pair: dict[tuple[int, int], list[Pop]] = {}
        for p in extract_pops(s):
            self.by_pair.setdefault((p.src, p.dst), []).append(p)
        for v in self.by_pair.values():
            v.sort(key=lambda e: (e.obj, e.type.value))

    def edge(self, src: int, dst: int, objs=None) -> Optional[Pop]:
        for e in self.by_pair.get((src, dst), []):
            if objs is None or e.obj in objs:
                if not e.type.is_reverse:
                    return e
        return None

    def p(self, e: Pop):
        return self.s.ops[e.witness[0]]

    def q(self, e: Pop):
        return self.s.ops[e.witness[-1]]


def _reverse_pair(c: PopCycle, idx: _PopIndex) -> Optional[PopCycle]:
    for e in c.edges:
        if e.type.is_reverse:
            partner = idx.edge(e.dst, e.src, {e.obj})
            if partner is not None:
                return PopCycle((partner, e))
    return None


def _single_object_step(edges: list[Pop], idx: _PopIndex) -> Optional[list[Pop]]:
    """One step of the induction on a single-object cycle T_1..T_k (k >= 3).

    Returns the shorter cycle's edge list, or None when the edge the case
    split promises is missing from the schedule's POPs.
    """
    k = len(edges)
    obj = edges[0].obj
    objs = {obj}
    t = [e.src for e in edges]          # t[0] = T_1 ... t[k-1] = T_k
    p1 = idx.p(edges[0])
    if p1.is_write:
        pk1 = idx.p(edges[k - 2])       # op of T_{k-1} opening (T_{k-1}, T_k)
        if precedes(p1, pk1) or (p1 == pk1):
            e = idx.edge(t[0], t[k - 1], objs)
            return None if e is None else [e, edges[k - 1]]
        e = idx.edge(t[k - 2], t[0], objs)
        return None if e is None else edges[: k - 2] + [e]
    q2 = idx.q(edges[0])                # p_1 is a read, so q_2 is a write
    if k == 3:
        p3 = idx.p(edges[2])
        if precedes(q2, p3):
            e = idx.edge(t[1], t[0], objs)
            return None if e is None else [edges[0], e]
        e = idx.edge(t[2], t[1], objs)
        return None if e is None else [edges[1], e]
    pk1 = idx.p(edges[k - 2])
    if precedes(q2, pk1):
        e = idx.edge(t[1], t[k - 1], objs)
        return None if e is None else [edges[0], e, edges[k - 1]]
    e = idx.edge(t[k - 2], t[1], objs)
    return None if e is None else edges[1: k - 2] + [e]


def _violations(edges: list[Pop]) -> list[str]:
    """Objects carried by more than two edges, or by two non-adjacent ones."""
    k = len(edges)
    bad = []
    by_obj: dict[str, list[int]] = {}
    for m, e in enumerate(edges):
        by_obj.setdefault(e.obj, []).append(m)
    for obj, pos in sorted(by_obj.items()):
        if len(pos) > 2:
            bad.append(obj)
        elif len(pos) == 2 and k > 2:
            a, b = pos
            if (b - a) % k != 1 and (a - b) % k != 1:
                bad.append(obj)
    return bad


def _shortcut(edges: list[Pop], src_pos: int, dst_pos: int, chord: Pop) -> list[Pop]:
    """Cycle made of the path dst..src along ``edges`` closed by ``chord``."""
    k = len(edges)
    path = []
    m = dst_pos
    while m != src_pos:
        path.append(edges[m])
        m = (m + 1) % k
    return path + [chord]


def _same_object_chords(edges: list[Pop], a: int, b: int, idx: _PopIndex) -> list[tuple[int, int]]:
    """Chord candidates for two edges on one object, in the order the
    version order of their first ops suggests them.  Positions index ``edges``:
    edge m runs from vertex m to vertex m+1."""
    k = len(edges)
    pa, pb = idx.p(edges[a]), idx.p(edges[b])
    nxt_a, nxt_b = (a + 1) % k, (b + 1) % k
    if pa.is_write:
        if precedes(pa, pb):
            return [(a, nxt_b), (b, a), (b, nxt_a)]
        return [(b, a), (b, nxt_a), (a, nxt_b)]
    qa = idx.q(edges[a])
    if precedes(qa, pb):
        return [(nxt_a, nxt_b), (a, nxt_b), (b, nxt_a)]
    return [(b, nxt_a), (nxt_a, nxt_b), (b, a)]


def _try_chord(edges, u, v, objs, idx) -> Optional[list[Pop]]:
    k = len(edges)
    if u == v or (u + 1) % k == v:
        return None
    chord = idx.edge(edges[u].src, edges[v].src, objs)
    if chord is None:
        return None
    return _shortcut(edges, u, v, chord)


def _shrink(edges: list[Pop], idx: _PopIndex, objs) -> Optional[list[Pop]]:
    bad = _violations(edges)
    k = len(edges)
    for obj in bad:
        pos = [m for m, e in enumerate(edges) if e.obj == obj]
        pairs = [(a, b) for a, b in itertools.combinations(pos, 2)]
        # non-adjacent pairs first
        pairs.sort(key=lambda ab: (min((ab[1] - ab[0]) % k, (ab[0] - ab[1]) % k) == 1, ab))
        for a, b in pairs:
            for first, second in ((a, b), (b, a)):
                for u, v in _same_object_chords(edges, first, second, idx):
                    got = _try_chord(edges, u, v, {obj}, idx)
                    if got is not None:
                        return got
    if bad:
        # any shortening chord on the cycle's objects
        for u in range(k):
            for v in range(k):
                got = _try_chord(edges, u, v, objs, idx)
                if got is not None:
                    return got
    return None


def _shortest_cycle(vertices, objs, idx: _PopIndex) -> Optional[list[Pop]]:
    vs = sorted(vertices)
    best = None
    for start in vs:
        prev: dict[int, Pop] = {}
        seen = {start}
        queue = deque([start])
        found = None
        while queue and found is None:
            v = queue.popleft()
            for w in vs:
                e = idx.edge(v, w, objs)
                if e is None:
                    continue
                if w == start:
                    found = e
                    break
                if w not in seen:
                    seen.add(w)
                    prev[w] = e
                    queue.append(w)
        if found is None:
            continue
        path = [found]
        v = found.src
        while v != start:
            path.append(prev[v])
            v = prev[v].src
        path.reverse()
        if best is None or len(path) < len(best):
            best = path
    return best


def reduce_single_object(c: PopCycle, s: Schedule) -> PopCycle:
    if c.n_obj != 1:
        raise ValueError("reduce_single_object needs a single-object cycle")
    if c.n_t == 2:
        return c
    idx = _PopIndex(s)
    pair = _reverse_pair(c, idx)
    if pair is not None:
        return pair
    edges = list(c.edges)
    while len(edges) > 2:
        nxt = _single_object_step(edges, idx)
        if nxt is None:
            nxt = _shrink(edges, idx, {edges[0].obj})
        if nxt is None:
            nxt = _shortest_cycle({e.src for e in edges}, {edges[0].obj}, idx)
            if nxt is None or len(nxt) >= len(edges):
                break
        edges = nxt
    return PopCycle(tuple(edges))


def reduce_cycle(c: PopCycle, s: Schedule) -> PopCycle:
    """Shrink ``c`` to a cycle of POPs of ``s`` with at most two adjacent
    edges per object (hence at most ``2 * n_obj`` transactions)."""
    if c.n_t == 2:
        return c
    idx = _PopIndex(s)
    pair = _reverse_pair(c, idx)
    if pair is not None:
        return pair
    if c.n_obj == 1:
        return reduce_single_object(c, s)
    objs = set(c.objects)
    edges = list(c.edges)
    while _violations(edges):
        nxt = _shrink(edges, idx, objs)
        if nxt is None:
            nxt = _shortest_cycle({e.src for e in edges}, objs, idx)
            if nxt is None or len(nxt) >= len(edges):
                break
        edges = nxt
    if len({e.obj for e in edges}) == 1 and len(edges) > 2:
        return reduce_single_object(PopCycle(tuple(edges)), s)
    return PopCycle(tuple(edges))


# -- verdicts ------------------------------------------------------------------

@dataclass
class Verdict:
    consistent: bool
    cycle: Optional[PopCycle] = None
    reduced: Optional[PopCycle] = None
    conflict: Optional[ConflictClass] = None
    granularity: Optional[GranularityClass] = None
    matches: list = field(default_factory=list)

    @property
    def is_anomaly(self) -> bool:
        return not self.consistent

    def summary(self) -> str:
        if self.consistent:
            return "Consistent"
        text = f"Anomaly: {self.conflict.value}/{self.granularity.value}"
        if self.matches:
            text += ", matches " + ", ".join(f"#{m.case_id} {m.name}" for m in self.matches)
        return text

    def to_record(self) -> dict:
        rec = {"consistent": self.consistent}
        if not self.consistent:
            rec.update(
                conflict=self.conflict.value,
                granularity=self.granularity.value,
                cycle=[e.line() for e in self.cycle.edges],
                reduced=[e.line() for e in self.reduced.edges],
                matches=[m.case_id for m in self.matches],
            )
        return rec


def check_consistency(s: Schedule) -> Verdict:
    g = build_graph(s)
    cyc = find_cycle(g)
    if cyc is None:
        return Verdict(True)
    from .catalog import match_anomaly

    reduced = reduce_cycle(cyc, s)
    conflict, gran = classify(reduced)
    return Verdict(False, cyc, reduced, conflict, gran, match_anomaly(s))


def is_distributed_anomaly(c: PopCycle, placement: Mapping[str, int]) -> bool:
    missing = [o for o in c.objects if o not in placement]
    if missing:
        raise KeyError(f"no placement for {', '.join(missing)}")
    return c.n_obj >= 2 and len({placement[o] for o in c.objects}) >= 2
