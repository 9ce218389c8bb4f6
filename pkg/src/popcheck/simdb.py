"""An in-memory multi-version key/value store with pluggable concurrency control.

Every mutation goes through one re-entrant lock.  Operations return
``concurrent.futures.Future`` objects: a future that is not done yet is a
blocked lock request, which the caller may wait on with a timeout.
"""
from __future__ import annotations

import itertools
import threading
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import networkx as nx

from .dialects import normalize_level

TWO_PHASE, WRITE_ONLY = "two-phase-read-write", "write-locks-only"
LOCKED, MV_RC, MV_SNAPSHOT, LATEST = "locked-current", "mv-read-committed", "mv-snapshot", "latest-uncommitted"
FIRST_OP, FIRST_READ = "first-operation", "first-read"
DETECT, WAIT_DIE = "wait-for-graph-detect", "wait-die-timeout"


@dataclass(frozen=True)
class CcProfile:
    lock_mode: str = WRITE_ONLY
    read_mode: str = MV_RC
    snapshot_timing: Optional[str] = None
    first_updater_abort: bool = False
    consecutive_rw_abort: bool = False
    deadlock: str = DETECT
    timeout: float = 20.0
    short_read_locks: bool = False     # release read locks right after the read

    def __post_init__(self):
        if self.lock_mode not in (TWO_PHASE, WRITE_ONLY):
            raise ValueError(f"unknown lock mode {self.lock_mode!r}")
        if self.read_mode not in (LOCKED, MV_RC, MV_SNAPSHOT, LATEST):
            raise ValueError(f"unknown read mode {self.read_mode!r}")
        if self.read_mode == MV_SNAPSHOT and self.snapshot_timing not in (FIRST_OP, FIRST_READ):
            raise ValueError("mv-snapshot needs snapshot_timing first-operation or first-read")
        if self.read_mode == LOCKED and self.lock_mode != TWO_PHASE:
            raise ValueError("locked-current reads need two-phase read/write locking")
        if self.deadlock not in (DETECT, WAIT_DIE):
            raise ValueError(f"unknown deadlock policy {self.deadlock!r}")


_STRICT_2PL = CcProfile(TWO_PHASE, LOCKED)
_MV_SNAP = CcProfile(WRITE_ONLY, MV_SNAPSHOT, FIRST_OP, first_updater_abort=True)
_MV_RC = CcProfile(WRITE_ONLY, MV_RC)
_RU = CcProfile(WRITE_ONLY, LATEST)

# level -> profile, per engine family
FAMILIES: dict[str, dict[str, CcProfile]] = {
    "mvcc": {
        "ser": replace(_MV_SNAP, consecutive_rw_abort=True),
        "rr": _MV_SNAP,
        "rc": _MV_RC,
        "ru": _MV_RC,
    },
    "mvcc-first-read": {
        "ser": replace(_MV_SNAP, snapshot_timing=FIRST_READ, consecutive_rw_abort=True),
        "rr": replace(_MV_SNAP, snapshot_timing=FIRST_READ),
        "rc": _MV_RC,
        "ru": _MV_RC,
    },
    "2pl": {
        "ser": _STRICT_2PL,
        "rr": _STRICT_2PL,
        "rc": replace(_STRICT_2PL, short_read_locks=True),
        "ru": _RU,
    },
    "mysql": {
        "ser": _STRICT_2PL,
        "rr": CcProfile(WRITE_ONLY, MV_SNAPSHOT, FIRST_READ),
        "rc": _MV_RC,
        "ru": _RU,
    },
}
FAMILIES["wait-die"] = {lvl: replace(p, deadlock=WAIT_DIE) for lvl, p in FAMILIES["mvcc"].items()}


def profile_for(family: str, level: str) -> CcProfile:
    try:
        table = FAMILIES[family]
    except KeyError:
        raise KeyError(f"unknown sim profile family {family!r}; known: {', '.join(FAMILIES)}") from None
    return table[normalize_level(level)]


class TxnAborted(Exception):
    def __init__(self, txn: int, reason: str, detail: str = "", seq: Optional[int] = None):
        self.txn, self.reason, self.detail, self.seq = txn, reason, detail, seq
        super().__init__(f"T{txn} aborted ({reason})" + (f": {detail}" if detail else ""))


class StoreClosed(RuntimeError):
    pass


@dataclass(frozen=True)
class OpResult:
    value: Any
    seq: int


@dataclass
class Version:
    value: Any
    writer: int
    commit_ts: Optional[int] = None     # None while uncommitted


@dataclass
class TxnHandle:
    id: int
    start: int
    profile: CcProfile
    level: str
    snapshot: Optional[int] = None
    state: str = "active"               # active, committed, aborted
    reason: Optional[str] = None
    commit_ts: Optional[int] = None
    locks: dict = field(default_factory=dict)        # key -> "S" | "X"
    rw_in: set = field(default_factory=set)
    rw_out: set = field(default_factory=set)
    waiting: Optional["_Request"] = None

    @property
    def active(self) -> bool:
        return self.state == "active"


@dataclass
class _Request:
    txn: int
    key: Any
    mode: str
    future: Future
    then: Callable[[], Any]


@dataclass
class _Lock:
    holders: dict = field(default_factory=dict)      # txn -> mode
    queue: deque = field(default_factory=deque)


def _compatible(a: str, b: str) -> bool:
    return a == "S" and b == "S"


class SimStore:
    def __init__(self, family: str = "mvcc", profiles: Optional[dict[str, CcProfile]] = None):
        if profiles is None:
            profile_for(family, "rc")
            profiles = FAMILIES[family]
        self.family = family
        self.profiles = profiles
        self._mu = threading.RLock()
        self._clock = itertools.count(1)
        self._seq = 0
        self._data: dict[Any, list[Version]] = {}
        self._locks: dict[Any, _Lock] = {}
        self._txns: dict[int, TxnHandle] = {}
        self._readers: dict[Any, set[int]] = {}
        self._closed = False
        self.victims: list[int] = []

    # -- bookkeeping ---------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _txn(self, txn: int) -> TxnHandle:
        try:
            return self._txns[txn]
        except KeyError:
            raise KeyError(f"T{txn} has not begun") from None

    def _dead(self, t: TxnHandle) -> Future:
        f: Future = Future()
        f.set_exception(TxnAborted(t.id, t.reason or "aborted", "transaction is no longer active"))
        return f

    def _done(self, value) -> Future:
        f: Future = Future()
        f.set_result(OpResult(value, self._next_seq()))
        return f

    def reset(self):
        """Drop all data and transactions (the DROP/CREATE of a fresh cell)."""
        with self._mu:
            for t in list(self._txns.values()):
                if t.active:
                    self._abort(t, "reset")
            self._data.clear()
            self._locks.clear()
            self._txns.clear()
            self._readers.clear()
            self.victims.clear()

    def seed(self, key, value):
        with self._mu:
            self._data[key] = [Version(value, 0, 0)]

    def close(self):
        with self._mu:
            self.reset()
            self._closed = True

    def txn(self, txn: int) -> TxnHandle:
        with self._mu:
            return self._txn(txn)

    def chain(self, key) -> list[Version]:
        with self._mu:
            return [replace(v) for v in self._data.get(key, [])]

    # -- transactions --------------------------------------------------------

    def begin(self, txn: int, level: str = "ser") -> TxnHandle:
        with self._mu:
            if self._closed:
                raise StoreClosed("store is closed")
            level = normalize_level(level)
            if level not in self.profiles:
                raise ValueError(f"level {level} not supported by profile family {self.family}")
            if txn in self._txns and self._txns[txn].active:
                raise ValueError(f"T{txn} is already active")
            prof = self.profiles[level]
            t = TxnHandle(txn, next(self._clock), prof, level)
            if prof.read_mode == MV_SNAPSHOT and prof.snapshot_timing == FIRST_OP:
                t.snapshot = t.start
            self._txns[txn] = t
            return t

    def read(self, txn: int, key) -> Future:
        with self._mu:
            t = self._txn(txn)
            if not t.active:
                return self._dead(t)
            if self._chain(key) is None:
                return self._missing(t, key)
            if t.profile.read_mode == LOCKED:
                return self._acquire(t, key, "S", lambda: self._do_read(t, key))
            return self._done(self._do_read(t, key))

    def write(self, txn: int, key, value) -> Future:
        with self._mu:
            t = self._txn(txn)
            if not t.active:
                return self._dead(t)
            if self._chain(key) is None:
                return self._missing(t, key)
            return self._acquire(t, key, "X", lambda: self._do_write(t, key, value))

    def commit(self, txn: int) -> Future:
        with self._mu:
            t = self._txn(txn)
            if not t.active:
                return self._dead(t)
            if t.profile.consecutive_rw_abort:
                live_in = {u for u in t.rw_in if self._txns[u].state != "aborted"}
                live_out = {u for u in t.rw_out if self._txns[u].state != "aborted"}
                if live_in and live_out:
                    return self._failed(t, "rule", "pivot of two consecutive rw dependencies")
            ts = next(self._clock)
            t.state, t.commit_ts = "committed", ts
            for chain in self._data.values():
                for v in chain:
                    if v.writer == t.id and v.commit_ts is None:
                        v.commit_ts = ts
            # stamp the commit before any waiter it wakes
            done = self._done(None)
            self._release_all(t)
            return done

    def abort(self, txn: int, reason: str = "user") -> Future:
        with self._mu:
            t = self._txn(txn)
            if not t.active:
                return self._dead(t)
            done = self._done(None)
            self._abort(t, reason)
            return done

    # -- internals -----------------------------------------------------------

    def _chain(self, key) -> Optional[list[Version]]:
        return self._data.get(key)

    def _missing(self, t: TxnHandle, key) -> Future:
        f: Future = Future()
        f.set_exception(KeyError(f"no row with key {key!r}"))
        return f

    def _failed(self, t: TxnHandle, reason: str, detail: str) -> Future:
        f: Future = Future()
        f.set_exception(TxnAborted(t.id, reason, detail, self._next_seq()))
        self._abort(t, reason)
        return f

    def _abort(self, t: TxnHandle, reason: str):
        t.state, t.reason = "aborted", reason
        for chain in self._data.values():
            chain[:] = [v for v in chain if not (v.writer == t.id and v.commit_ts is None)]
        req = t.waiting
        if req is not None:
            lk = self._locks[req.key]
            if req in lk.queue:
                lk.queue.remove(req)
            t.waiting = None
            if not req.future.done():
                req.future.set_exception(TxnAborted(t.id, reason, "aborted while waiting", self._next_seq()))
        self._release_all(t)
        if req is not None and req.key not in t.locks:
            # requests queued behind the withdrawn one may be grantable now
            self._grant_waiters(req.key)

    def _visible(self, t: TxnHandle, chain: list[Version]) -> Version:
        own = [v for v in chain if v.writer == t.id and v.commit_ts is None]
        if own:
            return own[-1]
        mode = t.profile.read_mode
        if mode == LATEST:
            return chain[-1]
        committed = [v for v in chain if v.commit_ts is not None]
        if mode == MV_SNAPSHOT:
            if t.snapshot is None:
                t.snapshot = next(self._clock)
            committed = [v for v in committed if v.commit_ts <= t.snapshot]
        return committed[-1]

    def _do_read(self, t: TxnHandle, key):
        chain = self._data[key]
        v = self._visible(t, chain)
        if t.profile.consecutive_rw_abort or any(
                u.profile.consecutive_rw_abort for u in self._txns.values()):
            # newer versions the read did not see are rw dependencies t -> writer
            later = chain[chain.index(v) + 1:]
            for w in later:
                if w.writer != t.id:
                    self._rw(t.id, w.writer)
            self._readers.setdefault(key, set()).add(t.id)
        if t.profile.short_read_locks and t.locks.get(key) == "S":
            del t.locks[key]
            self._release(key, t.id)
        return v.value

    def _do_write(self, t: TxnHandle, key, value):
        chain = self._data[key]
        prof = t.profile
        if prof.first_updater_abort and t.snapshot is not None:
            newest = max((v for v in chain if v.commit_ts is not None), key=lambda v: v.commit_ts)
            if newest.writer != t.id and newest.commit_ts > t.snapshot:
                raise TxnAborted(t.id, "rule", f"first updater wins on {key!r}")
        for r in self._readers.get(key, ()):
            u = self._txns.get(r)
            if r != t.id and u is not None and u.state != "aborted":
                if u.state == "active" or u.commit_ts > t.start:
                    self._rw(r, t.id)
        own = [v for v in chain if v.writer == t.id and v.commit_ts is None]
        if own:
            own[-1].value = value
        else:
            chain.append(Version(value, t.id))
        return None

    def _rw(self, reader: int, writer: int):
        if reader in self._txns and writer in self._txns:
            self._txns[reader].rw_out.add(writer)
            self._txns[writer].rw_in.add(reader)

    def _grantable(self, lk: _Lock, txn: int, mode: str, queue_ok: bool) -> bool:
        others = [m for h, m in lk.holders.items() if h != txn]
        if any(not _compatible(m, mode) for m in others):
            return False
        return queue_ok

    def _acquire(self, t: TxnHandle, key, mode: str, then: Callable[[], Any]) -> Future:
        lk = self._locks.setdefault(key, _Lock())
        held = lk.holders.get(t.id)
        if held == "X" or held == mode:
            return self._run(t, then)
        upgrade = held == "S"
        if self._grantable(lk, t.id, mode, upgrade or not lk.queue):
            lk.holders[t.id] = mode
            t.locks[key] = mode
            return self._run(t, then)
        req = _Request(t.id, key, mode, Future(), then)
        if upgrade:
            lk.queue.appendleft(req)
        else:
            lk.queue.append(req)
        t.waiting = req
        if t.profile.deadlock == DETECT:
            self._detect()
        return req.future

    def _run(self, t: TxnHandle, then) -> Future:
        try:
            value = then()
        except TxnAborted as e:
            return self._failed(t, e.reason, e.detail)
        return self._done(value)

    def _release_all(self, t: TxnHandle):
        keys = list(t.locks)
        t.locks.clear()
        for key in keys:
            self._release(key, t.id)

    def _release(self, key, txn: int):
        lk = self._locks.get(key)
        if lk is None:
            return
        lk.holders.pop(txn, None)
        self._grant_waiters(key)

    def _grant_waiters(self, key):
        lk = self._locks[key]
        while lk.queue:
            req = lk.queue[0]
            if not self._grantable(lk, req.txn, req.mode, True):
                break
            lk.queue.popleft()
            t = self._txns[req.txn]
            t.waiting = None
            lk.holders[req.txn] = "X" if lk.holders.get(req.txn) == "X" else req.mode
            t.locks[key] = lk.holders[req.txn]
            try:
                value = req.then()
            except TxnAborted as e:
                # _abort releases t's locks, which re-enters this loop
                req.future.set_exception(TxnAborted(t.id, e.reason, e.detail, self._next_seq()))
                self._abort(t, e.reason)
                return
            req.future.set_result(OpResult(value, self._next_seq()))

    def waits_for(self) -> nx.DiGraph:
        with self._mu:
            g = nx.DiGraph()
            for key, lk in self._locks.items():
                ahead: list[_Request] = []
                for req in lk.queue:
                    for h, m in lk.holders.items():
                        if h != req.txn and not (_compatible(m, req.mode)):
                            g.add_edge(req.txn, h)
                    for a in ahead:
                        if a.txn != req.txn and not _compatible(a.mode, req.mode):
                            g.add_edge(req.txn, a.txn)
                    ahead.append(req)
            return g

    def _detect(self) -> set[int]:
        victims = set()
        while True:
            g = self.waits_for()
            try:
                cycle = nx.find_cycle(g)
            except nx.NetworkXNoCycle:
                return victims
            members = {u for u, _ in cycle}
            victim = max(members, key=lambda x: self._txns[x].start)
            victims.add(victim)
            self.victims.append(victim)
            self._abort(self._txns[victim], "deadlock")

    def detect_deadlocks(self) -> set[int]:
        """Abort the youngest transaction of every waits-for cycle."""
        with self._mu:
            return self._detect()
