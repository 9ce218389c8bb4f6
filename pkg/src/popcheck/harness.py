"""Run step scripts over concurrent sessions, infer what happened, judge it."""
from __future__ import annotations

import json
import os
import queue
import re
import threading
import time
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .casegen import StepScript, Timing, decode_value, distributed_plan, plan_case
from .cycles import Verdict, check_consistency
from .dialects import SqlDialect, get_dialect
from .schedule import A, C, Operation, OpKind, R, Schedule, W
from .simdb import SimStore, TxnAborted, profile_for

ENV_VAR = "POPCHECK_ENDPOINT"


class EndpointError(RuntimeError):
    pass


class StepError(Exception):
    def __init__(self, cls: str, message: str, seq: Optional[int] = None):
        self.cls, self.message, self.seq = cls, message, seq
        super().__init__(f"{cls}: {message}")


# -- endpoints -------------------------------------------------------------------

@dataclass(frozen=True)
class Endpoint:
    kind: str                   # "sim" or "sql"
    target: str                 # profile family or database URL
    dialect: str = "ansi"

    def __str__(self) -> str:
        return f"sim:{self.target}" if self.kind == "sim" else self.target


def _dialect_for_url(url: str) -> str:
    scheme = url.split(":", 1)[0].split("+", 1)[0].lower()
    return {"postgresql": "postgresql", "postgres": "postgresql", "mysql": "mysql",
            "mariadb": "mysql", "sqlite": "sqlite"}.get(scheme, "ansi")


def parse_endpoint(text: str, dialect: Optional[str] = None) -> Endpoint:
    text = (text or "").strip()
    if not text:
        raise EndpointError(f"no endpoint given (pass --endpoint or set {ENV_VAR})")
    if text.startswith("sim:") or text == "sim":
        family = text[4:] or "mvcc"
        profile_for(family, "rc")
        return Endpoint("sim", family, dialect or "ansi")
    if "://" not in text:
        raise EndpointError(f"endpoint {text!r} is neither sim:<family> nor a database URL")
    return Endpoint("sql", text, dialect or _dialect_for_url(text))


def load_config(path) -> dict:
    """JSON connection config: endpoint, dialect, level, delay, timeout."""
    cfg = json.loads(Path(path).read_text())
    unknown = set(cfg) - {"endpoint", "dialect", "level", "delay", "timeout", "block_threshold"}
    if unknown:
        raise EndpointError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def endpoint_from_env(dialect: Optional[str] = None) -> Endpoint:
    return parse_endpoint(os.environ.get(ENV_VAR, ""), dialect)


class _Session:
    blocked = False

    def run(self, statements: list[str]):
        """Run one step's statements; returns (rows, seq-or-None)."""
        raise NotImplementedError

    def close(self):
        pass


_SET_ISO = re.compile(r"^SET (?:SESSION )?TRANSACTION ISOLATION LEVEL (.+)$", re.I)
_PRAGMA_RU = re.compile(r"^PRAGMA read_uncommitted = (\d)$", re.I)
_BEGIN = re.compile(r"^(BEGIN|START TRANSACTION)$", re.I)
_SELECT = re.compile(r"^SELECT \* FROM (\w+) WHERE k=(\d+)$", re.I)
_UPDATE = re.compile(r"^UPDATE (\w+) SET v=(-?\d+) WHERE k=(\d+)$", re.I)
_INSERT = re.compile(r"^INSERT INTO (\w+) VALUES \((\d+), (-?\d+)\)$", re.I)


class _SimSession(_Session):
    """Maps the rendered SQL onto store calls."""

    def __init__(self, store: SimStore, txn: int, timeout: float):
        self.store, self.txn, self.timeout = store, txn, timeout
        self.level = "ser"

    def _wait(self, fut):
        self.blocked = self.blocked or not fut.done()
        try:
            return fut.result(timeout=self.timeout)
        except TxnAborted as e:
            raise StepError(e.reason, str(e), e.seq) from None
        except FutureTimeout:
            self.store.abort(self.txn, "timeout")
            try:
                fut.result(timeout=1)
            except TxnAborted as e:
                raise StepError("timeout", str(e), e.seq) from None
            raise StepError("timeout", "step did not finish in time") from None
        except KeyError as e:
            raise StepError("other", str(e)) from None

    def run(self, statements):
        self.blocked = False
        rows, seq = None, None
        for stmt in statements:
            stmt = stmt.strip().rstrip(";")
            if m := _SET_ISO.match(stmt):
                self.level = m[1]
            elif m := _PRAGMA_RU.match(stmt):
                self.level = "ru" if m[1] == "1" else "ser"
            elif _BEGIN.match(stmt):
                self.store.begin(self.txn, self.level)
            elif stmt.upper() == "COMMIT":
                seq = self._wait(self.store.commit(self.txn)).seq
            elif stmt.upper() == "ROLLBACK":
                seq = self._wait(self.store.abort(self.txn)).seq
            elif m := _SELECT.match(stmt):
                res = self._wait(self.store.read(self.txn, (m[1], int(m[2]))))
                rows, seq = [(int(m[2]), res.value)], res.seq
            elif m := _UPDATE.match(stmt):
                seq = self._wait(self.store.write(self.txn, (m[1], int(m[3])), int(m[2]))).seq
            else:
                raise StepError("other", f"sim endpoint cannot run {stmt!r}")
        return rows, seq


def _sim_prep(store: SimStore, statements: list[str]):
    # partitions of t1 share its key space, so CREATE/DROP are no-ops here
    store.reset()
    for stmt in statements:
        if m := _INSERT.match(stmt):
            store.seed((m[1], int(m[2])), int(m[3]))
        elif not re.match(r"^(DROP|CREATE) TABLE", stmt, re.I):
            raise EndpointError(f"sim endpoint cannot run prep statement {stmt!r}")


class _SqlSession(_Session):
    def __init__(self, engine, dialect: SqlDialect, threshold: float):
        self.conn = engine.raw_connection()
        if hasattr(self.conn, "autocommit"):
            try:
                self.conn.autocommit = True
            except Exception:
                pass
        self.dialect, self.threshold = dialect, threshold

    def run(self, statements):
        cur = self.conn.cursor()
        rows = None
        start = time.monotonic()
        try:
            for stmt in statements:
                cur.execute(stmt)
                if stmt.lstrip().upper().startswith("SELECT"):
                    rows = [tuple(r) for r in cur.fetchall()]
        except Exception as e:              # driver errors vary by vendor
            raise StepError(self.dialect.error_class(str(e)), str(e)) from None
        finally:
            self.blocked = time.monotonic() - start >= self.threshold
            cur.close()
        return rows, None

    def close(self):
        try:
            self.conn.close()
        except Exception:
            pass


def _engine(ep: Endpoint, timing: Timing):
    import sqlalchemy
    from sqlalchemy.pool import NullPool

    kwargs = {"poolclass": NullPool}
    if ep.dialect == "sqlite":
        kwargs["connect_args"] = {"isolation_level": None, "check_same_thread": False,
                                  "timeout": timing.timeout}
    try:
        return sqlalchemy.create_engine(ep.target, **kwargs)
    except Exception as e:
        raise EndpointError(f"cannot open {ep.target}: {e}") from e


# -- traces -----------------------------------------------------------------------

@dataclass
class StepResult:
    session: int
    step: int                   # global seq of the planned step
    status: str                 # ok, blocked-then-ok, error, skipped
    error_class: Optional[str] = None
    message: str = ""
    rows: Optional[list] = None
    latency: float = 0.0
    order: Optional[int] = None # completion order stamp

    @property
    def completed(self) -> bool:
        return self.status in ("ok", "blocked-then-ok")

    def to_record(self) -> dict:
        rec = {"session": self.session, "step": self.step, "status": self.status}
        if self.error_class:
            rec["error"] = self.error_class
        if self.rows is not None:
            rec["rows"] = [list(r) for r in self.rows]
        return rec


@dataclass
class ExecutionTrace:
    script: StepScript
    results: list[StepResult]
    final: dict[int, str] = field(default_factory=dict)
    endpoint: str = ""

    def step(self, seq: int):
        return next(s for s in self.script.steps if s.seq == seq)

    def to_record(self) -> dict:
        return {"case": self.script.case_id, "level": self.script.isolation,
                "endpoint": self.endpoint, "results": [r.to_record() for r in self.results],
                "final": {str(k): v for k, v in sorted(self.final.items())}}


def _worker(session: _Session, inbox: queue.Queue, outbox: queue.Queue, threshold: float,
            counter, counter_lock):
    dead = False
    while True:
        step = inbox.get()
        if step is None:
            break
        if dead:
            outbox.put(StepResult(step.txn, step.seq, "skipped"))
            continue
        t0 = time.monotonic()
        try:
            rows, seq = session.run(step.sql)
            status = "blocked-then-ok" if session.blocked or time.monotonic() - t0 > threshold else "ok"
            res = StepResult(step.txn, step.seq, status, rows=rows)
        except StepError as e:
            dead = True
            seq = e.seq
            res = StepResult(step.txn, step.seq, "error", e.cls, e.message)
        res.latency = time.monotonic() - t0
        if seq is None:
            with counter_lock:
                seq = next(counter)
        res.order = seq
        outbox.put(res)
    session.close()


def run_case(script: StepScript, endpoint: Endpoint | str, store: Optional[SimStore] = None) -> ExecutionTrace:
    """Execute ``script``: one worker thread per transaction, steps issued
    in global order with the configured delay; a blocked step only holds
    up its own session."""
    import itertools

    ep = parse_endpoint(endpoint) if isinstance(endpoint, str) else endpoint
    timing = script.timing
    dialect = get_dialect(script.dialect)
    engine = None
    if ep.kind == "sim":
        store = store or SimStore(ep.target)
        _sim_prep(store, script.prep)
        # deadlock timeout is the script's, not the profile default
        sessions = {t: _SimSession(store, t, timing.timeout) for t in script.txns}
        counter = itertools.count(10 ** 9)
    else:
        engine = _engine(ep, timing)
        try:
            with engine.connect() as conn:
                raw = conn.connection
                cur = raw.cursor()
                for stmt in script.prep:
                    cur.execute(stmt)
                raw.commit()
        except Exception as e:
            raise EndpointError(f"prep failed on {ep}: {e}") from e
        sessions = {t: _SqlSession(engine, dialect, timing.threshold) for t in script.txns}
        counter = itertools.count(1)
    lock = threading.Lock()
    outbox: queue.Queue = queue.Queue()
    inboxes = {t: queue.Queue() for t in script.txns}
    workers = [threading.Thread(target=_worker, args=(sessions[t], inboxes[t], outbox,
                                                      timing.threshold, counter, lock), daemon=True)
               for t in script.txns]
    for w in workers:
        w.start()
    for k, step in enumerate(script.steps):
        inboxes[step.txn].put(step)
        if k + 1 < len(script.steps):
            time.sleep(timing.delay)
    for q in inboxes.values():
        q.put(None)
    deadline = time.monotonic() + timing.timeout + 5.0
    for w in workers:
        w.join(max(0.0, deadline - time.monotonic()))
    results = []
    while not outbox.empty():
        results.append(outbox.get())
    done = {r.step for r in results}
    for step in script.steps:
        if step.seq not in done:
            results.append(StepResult(step.txn, step.seq, "error", "timeout", "no response"))
    completed = sorted((r for r in results if r.status != "skipped" and r.order is not None),
                       key=lambda r: r.order)
    rest = sorted((r for r in results if r.status == "skipped" or r.order is None),
                  key=lambda r: r.step)
    if engine is not None:
        engine.dispose()
    trace = ExecutionTrace(script, completed + rest, endpoint=str(ep))
    trace.final = _final_states(trace)
    return trace


def _final_states(trace: ExecutionTrace) -> dict[int, str]:
    final = {t: "active" for t in trace.script.txns}
    for r in trace.results:
        if r.status == "error":
            final[r.session] = "timed-out" if r.error_class == "timeout" else "aborted"
        elif r.completed:
            op = trace.step(r.step).op
            if op.kind is OpKind.COMMIT:
                final[r.session] = "committed"
            elif op.kind is OpKind.ABORT:
                final[r.session] = "aborted"
    return final


class DecodeError(ValueError):
    pass


def infer_executed_schedule(t: ExecutionTrace) -> Schedule:
    ops: list[Operation] = []
    versions: dict[str, int] = {}
    by_write: dict[int, int] = {}          # planned seq of a write -> inferred version
    ended: set[int] = set()
    for r in t.results:
        if r.status == "skipped":
            continue
        step = t.step(r.step)
        op = step.op
        if r.status == "error":
            if op.txn not in ended:
                ops.append(A(op.txn))
                ended.add(op.txn)
            continue
        if op.is_write:
            versions[op.obj] = versions.get(op.obj, 0) + 1
            by_write[step.seq] = versions[op.obj]
            ops.append(W(op.txn, op.obj, versions[op.obj]))
        elif op.is_read:
            if not r.rows:
                raise DecodeError(f"read at step {step.seq} returned no row")
            value = r.rows[0][-1]
            try:
                src = decode_value(value)
            except ValueError as e:
                raise DecodeError(str(e)) from None
            if src is None:
                ver = 0
            else:
                writer = t.step(src[1]) if any(s.seq == src[1] for s in t.script.steps) else None
                if writer is None or writer.txn != src[0] or src[1] not in by_write \
                        or writer.op.obj != op.obj:
                    raise DecodeError(f"value {value} read at step {step.seq} matches no executed write")
                ver = by_write[src[1]]
            ops.append(R(op.txn, op.obj, ver))
        elif op.txn not in ended:
            ops.append(C(op.txn) if op.kind is OpKind.COMMIT else A(op.txn))
            ended.add(op.txn)
    return Schedule(tuple(ops))


# -- judging ----------------------------------------------------------------------

LETTERS = ("A", "P", "R", "D", "T")


@dataclass
class Outcome:
    letter: str
    schedule: Schedule
    verdict: Verdict
    error: Optional[StepResult] = None

    def to_record(self) -> dict:
        rec = {"outcome": self.letter, "executed": str(self.schedule),
               "verdict": self.verdict.to_record()}
        if self.error is not None:
            rec["error"] = {"session": self.error.session, "class": self.error.error_class}
        return rec


def _error_letter(r: StepResult, timeout: float) -> str:
    return {"rule": "R", "deadlock": "D", "timeout": "T"}.get(
        r.error_class, "T" if r.latency >= timeout else "R")


def judge(t: ExecutionTrace) -> Outcome:
    sched = infer_executed_schedule(t)
    verdict = check_consistency(sched)
    errors = [r for r in t.results if r.status == "error"]
    if errors:
        first = errors[0]
        return Outcome(_error_letter(first, t.script.timing.timeout), sched, verdict, first)
    return Outcome("P" if verdict.consistent else "A", sched, verdict)


def run_suite(case_ids, levels, endpoint: Endpoint | str, dialect: Optional[str] = None,
              timing: Optional[Timing] = None, distributed: Optional[int] = None,
              mode: str = "range-partition", keep_traces: bool = False):
    from .report import Cell, ReportMatrix

    ep = parse_endpoint(endpoint, dialect) if isinstance(endpoint, str) else endpoint
    timing = timing or Timing()
    matrix = ReportMatrix(list(case_ids), list(levels), str(ep), timing=timing)
    store = SimStore(ep.target) if ep.kind == "sim" else None
    for cid in matrix.cases:
        for level in matrix.levels:
            try:
                if distributed:
                    script = distributed_plan(cid, distributed, mode, level, ep.dialect, timing)
                else:
                    script = plan_case(cid, level, ep.dialect, timing)
                trace = run_case(script, ep, store)
                outcome = judge(trace)
                matrix.set(cid, level, Cell(outcome.letter, outcome, trace if keep_traces else None))
            except (EndpointError, DecodeError) as e:
                matrix.set(cid, level, Cell("!", None, None, str(e)))
    return matrix
