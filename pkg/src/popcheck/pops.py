"""Partial order pairs (POPs) and the POP graph of a schedule."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .schedule import Operation, OpKind, Schedule, ScheduleError, precedes, validate


class PopType(enum.Enum):
    WW = "WW"
    WR = "WR"
    RW = "RW"
    WCW = "WCW"
    WCR = "WCR"
    RCW = "RCW"
    RA = "RA"
    WC = "WC"
    WA = "WA"

    @property
    def primitive(self) -> Optional["PopType"]:
        """The plain conflict this POP refines; None for the reverse edges."""
        return _PRIMITIVE[self]

    @property
    def is_reverse(self) -> bool:
        return self in (PopType.RA, PopType.WC, PopType.WA)


_PRIMITIVE = {
    PopType.WW: PopType.WW, PopType.WR: PopType.WR, PopType.RW: PopType.RW,
    PopType.WCW: PopType.WW, PopType.WCR: PopType.WR, PopType.RCW: PopType.RW,
    PopType.RA: None, PopType.WC: None, PopType.WA: None,
}

_BASE = {("W", "W"): PopType.WW, ("W", "R"): PopType.WR, ("R", "W"): PopType.RW}
_COMMITTED = {("W", "W"): PopType.WCW, ("W", "R"): PopType.WCR, ("R", "W"): PopType.RCW}


@dataclass(frozen=True)
class Pop:
    type: PopType
    src: int
    dst: int
    obj: str
    witness: tuple[int, ...] = field(compare=False, default=())

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("a POP joins two different transactions")

    @property
    def key(self) -> tuple:
        return (self.type.value, self.src, self.dst, self.obj)

    @property
    def first_op(self) -> int:
        """Schedule index of the operation that opens the pair."""
        return self.witness[0]

    def label(self) -> str:
        """Paper-style label such as ``R3C3W2[x]`` or ``R3A1[y]``."""
        t = self.type.value
        if self.type.is_reverse:
            # reverse edges are written with the ops that form them: R_j A_i
            first = {"RA": "R", "WC": "W", "WA": "W"}[t]
            return f"{first}{self.src}{t[1]}{self.dst}[{self.obj}]"
        if len(t) == 3:
            return f"{t[0]}{self.src}C{self.src}{t[2]}{self.dst}[{self.obj}]"
        return f"{t[0]}{self.src}{t[1]}{self.dst}[{self.obj}]"

    def line(self) -> str:
        return f"{self.type.value} {self.src} {self.dst} {self.obj}"

    def __str__(self) -> str:
        return self.label()


def classify_pair(p: Operation, q: Operation, term_i: Optional[tuple[OpKind, int]],
                  term_j: Optional[tuple[OpKind, int]], pos_p: int, pos_q: int):
    """POPs formed by ``p`` (of T_i) followed in version order by ``q`` (of T_j).

    ``term_i``/``term_j`` are ``(kind, position)`` of each transaction's
    terminal or None while active.  Returns a list of ``(PopType, src, dst)``.
    """
    if p.obj != q.obj or p.is_terminal or q.is_terminal:
        raise ValueError("classify_pair needs two reads/writes on one object")
    if p.txn == q.txn:
        raise ValueError("classify_pair needs operations of two transactions")
    if not (p.is_write or q.is_write):
        raise ValueError("classify_pair needs at least one write")
    i, j = p.txn, q.txn
    kinds = (p.kind.value, q.kind.value)

    # an aborted second transaction is never affected, whatever T_i did
    if term_j is not None and term_j[0] is OpKind.ABORT:
        return []
    if term_i is not None and pos_p < term_i[1] < pos_q:
        if term_i[0] is OpKind.ABORT:
            return []
        return [(_COMMITTED[kinds], i, j)]
    out = [(_BASE[kinds], i, j)]
    if term_i is not None and term_i[1] > pos_q:
        if term_i[0] is OpKind.ABORT:
            if kinds == ("W", "R"):
                out.append((PopType.RA, j, i))
            elif kinds == ("W", "W"):
                out.append((PopType.WA, j, i))
        elif kinds == ("W", "W"):
            out.append((PopType.WC, j, i))
    return out


def _terminals(s: Schedule) -> dict[int, tuple[OpKind, int]]:
    out = {}
    for i, op in enumerate(s.ops):
        if op.is_terminal and op.txn not in out:
            out[op.txn] = (op.kind, i)
    return out


def _check(s: Schedule):
    problems = validate(s)
    if problems:
        raise ScheduleError(f"invalid schedule: {problems[0]}", problems[0].index)


def extract_pops(s: Schedule, checked: bool = True) -> set[Pop]:
    if checked:
        _check(s)
    terms = _terminals(s)
    found: dict[tuple, Pop] = {}
    by_obj: dict[str, list[int]] = {}
    for idx, op in enumerate(s.ops):
        if op.obj is not None:
            by_obj.setdefault(op.obj, []).append(idx)
    for obj, idxs in by_obj.items():
        for a in idxs:
            p = s.ops[a]
            for b in idxs:
                q = s.ops[b]
                if p.txn == q.txn or not precedes(p, q):
                    continue
                ti, tj = terms.get(p.txn), terms.get(q.txn)
                for kind, src, dst in classify_pair(p, q, ti, tj, a, b):
                    if kind.is_reverse:
                        witness = (b, ti[1])
                    elif len(kind.value) == 3:
                        witness = (a, ti[1], b)
                    else:
                        witness = (a, b)
                    pop = Pop(kind, src, dst, obj, witness)
                    prev = found.get(pop.key)
                    if prev is None or pop.witness < prev.witness:
                        found[pop.key] = pop
    return set(found.values())


@dataclass
class PopGraph:
    vertices: tuple[int, ...]
    edges: tuple[Pop, ...]

    def out_edges(self, v: int) -> list[Pop]:
        return [e for e in self.edges if e.src == v]

    def successors(self, v: int) -> list[int]:
        return sorted({e.dst for e in self.edges if e.src == v})

    def edge_pairs(self) -> set[tuple[int, int]]:
        return {(e.src, e.dst) for e in self.edges}

    def lines(self) -> list[str]:
        return [e.line() for e in self.edges]


def sort_pops(pops) -> list[Pop]:
    return sorted(pops, key=lambda p: (p.src, p.dst, p.obj, p.type.value))


def build_graph(s: Schedule, checked: bool = True) -> PopGraph:
    return PopGraph(s.txns, tuple(sort_pops(extract_pops(s, checked))))


def parse_pop_lines(text: str) -> set[tuple]:
    """Read the ``TYPE from to object`` line format back into POP keys."""
    out = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, src, dst, obj = line.split()
        out.add((PopType(t).value, int(src), int(dst), obj))
    return out
