"""Schedule notation and the formal schedule model.

A schedule is written as whitespace separated tokens::

    R1[x0] R3[x0] W1[y1] R3[y1] C3 W2[x1] R1[y1] A1

``R``/``W`` tokens name a transaction, an object and (optionally) a version;
``C``/``A`` tokens terminate a transaction.  Versions left out are inferred:
a write creates the next version of its object, a read sees the newest
version written before it in the text.
"""
from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional


class OpKind(enum.Enum):
    READ = "R"
    WRITE = "W"
    COMMIT = "C"
    ABORT = "A"

    @property
    def is_terminal(self) -> bool:
        return self in (OpKind.COMMIT, OpKind.ABORT)


@dataclass(frozen=True)
class Operation:
    kind: OpKind
    txn: int
    obj: Optional[str] = None
    version: Optional[int] = None

    def __post_init__(self):
        if self.txn < 1:
            raise ValueError(f"transaction ids are 1-based, got {self.txn}")
        if self.kind.is_terminal:
            if self.obj is not None or self.version is not None:
                raise ValueError("commit/abort carry no object or version")
        elif self.obj is None or self.version is None or self.version < 0:
            raise ValueError("reads and writes need an object and a version")

    @property
    def is_read(self) -> bool:
        return self.kind is OpKind.READ

    @property
    def is_write(self) -> bool:
        return self.kind is OpKind.WRITE

    @property
    def is_terminal(self) -> bool:
        return self.kind.is_terminal

    def __str__(self) -> str:
        if self.is_terminal:
            return f"{self.kind.value}{self.txn}"
        return f"{self.kind.value}{self.txn}[{self.obj}{self.version}]"


def R(txn: int, obj: str, version: int) -> Operation:
    return Operation(OpKind.READ, txn, obj, version)


def W(txn: int, obj: str, version: int) -> Operation:
    return Operation(OpKind.WRITE, txn, obj, version)


def C(txn: int) -> Operation:
    return Operation(OpKind.COMMIT, txn)


def A(txn: int) -> Operation:
    return Operation(OpKind.ABORT, txn)


class ScheduleError(ValueError):
    """Malformed or illegal schedule text.  ``position`` is the token index."""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"token {position}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Violation:
    kind: str
    index: int
    txn: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind} for T{self.txn} at op {self.index}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class Schedule:
    ops: tuple[Operation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def __getitem__(self, i):
        return self.ops[i]

    def __str__(self) -> str:
        return format_schedule(self)

    @property
    def txns(self) -> tuple[int, ...]:
        return tuple(sorted({op.txn for op in self.ops}))

    @property
    def objects(self) -> tuple[str, ...]:
        """Objects in order of first appearance."""
        seen: dict[str, None] = {}
        for op in self.ops:
            if op.obj is not None:
                seen.setdefault(op.obj)
        return tuple(seen)

    def terminal_index(self, txn: int) -> Optional[int]:
        for i, op in enumerate(self.ops):
            if op.txn == txn and op.is_terminal:
                return i
        return None

    def state(self, txn: int) -> str:
        i = self.terminal_index(txn)
        if i is None:
            return "active"
        return "committed" if self.ops[i].kind is OpKind.COMMIT else "aborted"

    def ops_of(self, txn: int) -> list[int]:
        return [i for i, op in enumerate(self.ops) if op.txn == txn]

    def ops_on(self, obj: str) -> list[int]:
        return [i for i, op in enumerate(self.ops) if op.obj == obj]


_OBJ = r"[a-z](?:[a-z0-9_]*[a-z_])?"
_RW_TOKEN = re.compile(rf"^(?P<kind>[RW])(?P<txn>[1-9]\d*)\[(?P<obj>{_OBJ})(?P<ver>\d+)?\]$")
_TERM_TOKEN = re.compile(r"^(?P<kind>[CA])(?P<txn>[1-9]\d*)$")


def parse_schedule(text: str, strict: bool = True) -> Schedule:
    """Parse schedule notation.

    Version inference and version checks always apply.  With ``strict`` the
    structural rules (one terminal per transaction, terminal last) are
    enforced too; pass ``strict=False`` to get the raw schedule and inspect it
    with :func:`validate`.
    """
    ops = []
    latest: dict[str, int] = {}
    for pos, token in enumerate(text.split()):
        m = _TERM_TOKEN.match(token)
        if m:
            ops.append(Operation(OpKind(m["kind"]), int(m["txn"])))
            continue
        m = _RW_TOKEN.match(token)
        if not m:
            raise ScheduleError(f"cannot parse {token!r}", pos)
        kind, txn, obj = OpKind(m["kind"]), int(m["txn"]), m["obj"]
        current = latest.get(obj, 0)
        given = None if m["ver"] is None else int(m["ver"])
        if kind is OpKind.WRITE:
            version = current + 1
            if given is not None and given != version:
                raise ScheduleError(f"{token} should write version {version} of {obj}", pos)
            latest[obj] = version
        else:
            version = current if given is None else given
            if version > current:
                raise ScheduleError(f"{token} reads version {version} of {obj} which does not exist yet", pos)
        ops.append(Operation(kind, txn, obj, version))
    s = Schedule(tuple(ops))
    if strict:
        problems = validate(s)
        if problems:
            raise ScheduleError(str(problems[0]), problems[0].index)
    return s


def format_schedule(s: Schedule | Iterable[Operation]) -> str:
    return " ".join(str(op) for op in s)


def validate(s: Schedule) -> list[Violation]:
    out = []
    last_rw: dict[int, int] = {}
    for i, op in enumerate(s.ops):
        if not op.is_terminal:
            last_rw[op.txn] = i
    ended: dict[int, int] = {}
    latest: dict[str, int] = {}
    for i, op in enumerate(s.ops):
        if op.is_terminal:
            if op.txn in ended:
                out.append(Violation("duplicate-terminal", i, op.txn))
            else:
                ended[op.txn] = i
                if last_rw.get(op.txn, -1) > i:
                    out.append(Violation("terminal-not-last", i, op.txn))
            continue
        current = latest.get(op.obj, 0)
        if op.is_write:
            if op.version != current + 1:
                out.append(Violation("write-version", i, op.txn, f"expected {op.obj}{current + 1}"))
            latest[op.obj] = max(current, op.version)
        elif op.version > current:
            out.append(Violation("nonexistent-version", i, op.txn, f"{op.obj}{op.version}"))
    return out


def precedes(p: Operation, q: Operation) -> bool:
    """Version order between two operations on one object.

    Writes are ordered by the versions they create; a read follows every
    write up to the version it saw and precedes every later one.  Two reads
    are never ordered.
    """
    if p.obj != q.obj or p.is_terminal or q.is_terminal:
        return False
    if p.is_write and q.is_write:
        return p.version < q.version
    if p.is_write and q.is_read:
        return p.version <= q.version
    if p.is_read and q.is_write:
        return p.version < q.version
    return False


@dataclass(frozen=True)
class VersionOrder:
    obj: str
    ops: tuple[int, ...]
    pairs: frozenset[tuple[int, int]]

    def operations(self, s: Schedule) -> list[Operation]:
        return [s.ops[i] for i in self.ops]

    def before(self, i: int, j: int) -> bool:
        return (i, j) in self.pairs


def version_order(s: Schedule, obj: str) -> VersionOrder:
    idx = s.ops_on(obj)
    if not idx:
        raise KeyError(f"object {obj!r} does not appear in the schedule")
    pairs = frozenset((i, j) for i in idx for j in idx if i != j and precedes(s.ops[i], s.ops[j]))
    return VersionOrder(obj, tuple(idx), pairs)


def _keyed(s: Schedule) -> list[tuple]:
    # disambiguates repeated identical tokens (e.g. R1[x0] twice) by occurrence
    seen: Counter = Counter()
    keys = []
    for op in s.ops:
        seen[op] += 1
        keys.append((op, seen[op]))
    return keys


def _signature(s: Schedule):
    keys = _keyed(s)
    per_txn_obj: dict[tuple, list] = {}
    for k in keys:
        op = k[0]
        per_txn_obj.setdefault((op.txn, op.obj), []).append(k)
    ordered = set()
    for i, p in enumerate(s.ops):
        for j, q in enumerate(s.ops):
            if i != j and precedes(p, q):
                ordered.add((keys[i], keys[j]))
    # where each terminal sits relative to other transactions' accesses of
    # objects its own transaction touched
    touched: dict[int, set] = {}
    for op in s.ops:
        if op.obj is not None:
            touched.setdefault(op.txn, set()).add(op.obj)
    around = set()
    for i, t in enumerate(s.ops):
        if not t.is_terminal:
            continue
        objs = touched.get(t.txn, set())
        for j, op in enumerate(s.ops):
            if op.txn != t.txn and op.obj in objs:
                around.add((keys[i], keys[j], i < j))
    return Counter(s.ops), per_txn_obj, ordered, around


def equivalent(a: Schedule, b: Schedule) -> bool:
    """Same operations, same per-transaction order on every object, same
    version order, and every terminal on the same side of the other
    transactions' accesses to the objects it covers."""
    return _signature(a) == _signature(b)
