"""Turn catalog templates into multi-session SQL step scripts."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .catalog import AnomalyCase, SDA, lookup
from .dialects import SqlDialect, get_dialect, normalize_level
from .schedule import C, Operation, OpKind, Schedule, format_schedule, parse_schedule, precedes

TABLE = "t1"


@dataclass(frozen=True)
class Timing:
    delay: float = 0.1
    timeout: float = 20.0
    block_threshold: Optional[float] = None   # defaults to delay

    @property
    def threshold(self) -> float:
        return self.delay if self.block_threshold is None else self.block_threshold


@dataclass
class PlannedStep:
    seq: int                    # 1-based global order
    txn: int
    op: Operation
    first: bool = False         # carries the transaction's begin
    implicit: bool = False      # terminal added by the planner, not in the template
    sql: list[str] = field(default_factory=list)


@dataclass
class StepScript:
    case_id: int
    name: str
    isolation: str
    steps: list[PlannedStep]
    placement: dict[str, int]
    prep: list[str] = field(default_factory=list)
    dialect: str = "ansi"
    timing: Timing = field(default_factory=Timing)
    distributed: Optional[str] = None      # None, "range-partition" or "table-per-object"

    @property
    def txns(self) -> list[int]:
        return sorted({s.txn for s in self.steps})

    @property
    def objects(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.steps:
            if s.op.obj is not None:
                seen.setdefault(s.op.obj)
        return list(seen)

    def sessions(self) -> dict[int, list[PlannedStep]]:
        out: dict[int, list[PlannedStep]] = {t: [] for t in self.txns}
        for s in self.steps:
            out[s.txn].append(s)
        return out

    def schedule(self, include_implicit: bool = True) -> Schedule:
        return Schedule(tuple(s.op for s in self.steps if include_implicit or not s.implicit))

    def table_of(self, obj: str) -> str:
        if self.distributed == "table-per-object" or (
                self.distributed and get_dialect(self.dialect).partition == "tables"):
            return f"t{self.placement[obj] + 1}"
        return TABLE

    def key_of(self, obj: str) -> int:
        return self.objects.index(obj)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "name": self.name,
            "isolation": self.isolation,
            "dialect": self.dialect,
            "distributed": self.distributed,
            "timing": asdict(self.timing),
            "placement": self.placement,
            "prep": self.prep,
            "schedule": format_schedule(s.op for s in self.steps),
            "steps": [
                {"seq": s.seq, "txn": s.txn, "op": str(s.op), "first": s.first,
                 "implicit": s.implicit, "sql": s.sql}
                for s in self.steps
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepScript":
        ops = parse_schedule(d["schedule"]).ops
        steps = [
            PlannedStep(st["seq"], st["txn"], op, st["first"], st["implicit"], list(st["sql"]))
            for st, op in zip(d["steps"], ops)
        ]
        return cls(d["case_id"], d["name"], d["isolation"], steps, dict(d["placement"]),
                   list(d["prep"]), d["dialect"], Timing(**d["timing"]), d.get("distributed"))


def save_script(script: StepScript, path) -> None:
    Path(path).write_text(json.dumps(script.to_dict(), indent=2) + "\n")


def load_script(path) -> StepScript:
    return StepScript.from_dict(json.loads(Path(path).read_text()))


# -- value encoding ------------------------------------------------------------

def encode_value(txn: int, seq: int) -> int:
    if not 0 < seq < 1000:
        raise ValueError("step sequence must be in 1..999")
    return txn * 1000 + seq


def decode_value(v: int) -> Optional[tuple[int, int]]:
    """(txn, seq) of the write that stored ``v``; None for the seed value 0."""
    if v == 0:
        return None
    txn, seq = divmod(int(v), 1000)
    if txn < 1 or seq < 1:
        raise ValueError(f"value {v} was not written by a test step")
    return txn, seq


# -- planning ------------------------------------------------------------------

def _conflicts(a: Operation, b: Operation) -> bool:
    return (a.txn != b.txn and a.obj is not None and a.obj == b.obj
            and (a.is_write or b.is_write))


def _constraints(ops: tuple[Operation, ...]) -> dict[int, set[int]]:
    """For each op index, the indices that must be issued before it."""
    n = len(ops)
    touched: dict[int, set] = {}
    for op in ops:
        if op.obj is not None:
            touched.setdefault(op.txn, set()).add(op.obj)
    before: dict[int, set[int]] = {i: set() for i in range(n)}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a, b = ops[i], ops[j]
            if precedes(a, b):
                before[j].add(i)
            elif a.txn == b.txn and i < j and (a.obj == b.obj or b.is_terminal):
                before[j].add(i)
            elif a.is_terminal and b.txn != a.txn and b.obj in touched.get(a.txn, ()):
                # a terminal keeps its side of other txns' accesses to its objects
                (before[j] if i < j else before[i]).add(i if i < j else j)
    return before


def plan_order(template: Schedule) -> list[int]:
    """Issue order over template indices.

    Greedy list scheduling: among the operations whose ordering constraints
    are met, issue first the ones that do not conflict with anything another
    transaction has already issued, breaking ties by template position.
    """
    ops = template.ops
    before = _constraints(ops)
    done: list[int] = []
    left = set(range(len(ops)))
    while left:
        ready = sorted(i for i in left if before[i] <= set(done))
        if not ready:
            raise ValueError("ordering constraints are cyclic")
        calm = [i for i in ready if not any(_conflicts(ops[d], ops[i]) for d in done)]
        pick = (calm or ready)[0]
        done.append(pick)
        left.remove(pick)
    return done


def _render_op(script: StepScript, step: PlannedStep, dialect: SqlDialect) -> list[str]:
    out = dialect.start(script.isolation) if step.first else []
    op = step.op
    if op.kind is OpKind.READ:
        out.append(f"SELECT * FROM {script.table_of(op.obj)} WHERE k={script.key_of(op.obj)}")
    elif op.kind is OpKind.WRITE:
        out.append(f"UPDATE {script.table_of(op.obj)} SET v={encode_value(step.txn, step.seq)} "
                   f"WHERE k={script.key_of(op.obj)}")
    elif op.kind is OpKind.COMMIT:
        out.append(dialect.commit)
    else:
        out.append(dialect.rollback)
    return out


def _prep(script: StepScript, dialect: SqlDialect) -> list[str]:
    objs = script.objects
    if script.distributed is None:
        tables = {TABLE: objs}
    else:
        tables = {}
        for o in objs:
            tables.setdefault(script.table_of(o), []).append(o)
    out = []
    for t in tables:
        out.append(f"DROP TABLE IF EXISTS {t}")
    if script.distributed == "range-partition" and dialect.partition != "tables":
        out.extend(_partitioned_ddl(script, dialect))
    else:
        out.extend(dialect.create_table(t) for t in tables)
    for t, members in tables.items():
        for o in members:
            out.append(f"INSERT INTO {t} VALUES ({script.key_of(o)}, 0)")
    return out


def _partitioned_ddl(script: StepScript, dialect: SqlDialect) -> list[str]:
    # placement is contiguous in key order, so each partition is one key range
    bounds: dict[int, list[int]] = {}
    for o in script.objects:
        bounds.setdefault(script.placement[o], []).append(script.key_of(o))
    parts = sorted(bounds)
    base = dialect.create_table(TABLE) + " " + dialect.partition
    if dialect.name == "mysql":
        clauses = [f"PARTITION p{p} VALUES LESS THAN ({max(bounds[p]) + 1})" for p in parts[:-1]]
        clauses.append(f"PARTITION p{parts[-1]} VALUES LESS THAN (MAXVALUE)")
        return [base + " (" + ", ".join(clauses) + ")"]
    out = [base]
    for p in parts:
        out.append(f"CREATE TABLE {TABLE}_p{p} PARTITION OF {TABLE} "
                   f"FOR VALUES FROM ({min(bounds[p])}) TO ({max(bounds[p]) + 1})")
    return out


def _render(script: StepScript) -> StepScript:
    d = get_dialect(script.dialect)
    script.prep = _prep(script, d)
    for st in script.steps:
        st.sql = _render_op(script, st, d)
    return script


def plan_case(case: AnomalyCase | int, isolation: str = "rc", dialect: str = "ansi",
              timing: Optional[Timing] = None, template: Optional[Schedule] = None) -> StepScript:
    if isinstance(case, int):
        case = lookup(case)
    tmpl = case.template if template is None else template
    level = normalize_level(isolation)
    order = plan_order(tmpl)
    ops = [tmpl.ops[i] for i in order]
    implicit = [False] * len(ops)
    ended = {op.txn for op in ops if op.is_terminal}
    # transactions the template leaves open commit at the end, by id
    for t in tmpl.txns:
        if t not in ended:
            ops.append(C(t))
            implicit.append(True)
    steps, begun = [], set()
    for k, op in enumerate(ops):
        steps.append(PlannedStep(k + 1, op.txn, op, op.txn not in begun, implicit[k]))
        begun.add(op.txn)
    placement = {o: 0 for o in tmpl.objects}
    script = StepScript(case.id, case.name, level, steps, placement, dialect=dialect,
                        timing=timing or Timing())
    get_dialect(dialect)
    return _render(script)


def place_objects(objects, n_partitions: int) -> dict[str, int]:
    """Contiguous blocks in first-appearance order: object i -> i*n // n_obj."""
    objects = list(objects)
    return {o: i * n_partitions // len(objects) for i, o in enumerate(objects)}


def distributed_plan(case: AnomalyCase | int, n_partitions: int = 2,
                     mode: str = "range-partition", isolation: str = "rc",
                     dialect: str = "ansi", timing: Optional[Timing] = None) -> StepScript:
    if isinstance(case, int):
        case = lookup(case)
    if case.granularity is SDA:
        raise ValueError(f"case {case.id} ({case.name}) is single-object; it cannot be distributed")
    if n_partitions < 2:
        raise ValueError("a distributed plan needs at least 2 partitions")
    if mode not in ("range-partition", "table-per-object"):
        raise ValueError(f"unknown distribution mode {mode!r}")
    script = plan_case(case, isolation, dialect, timing)
    script.distributed = mode
    script.placement = place_objects(script.objects, n_partitions)
    return _render(script)


def emit_sql(script: StepScript, dialect: str | SqlDialect | None = None):
    """Prep statements and per-session ``(seq, statements)`` lists."""
    if dialect is not None:
        name = dialect.name if isinstance(dialect, SqlDialect) else dialect
        get_dialect(name)
        script = StepScript.from_dict(script.to_dict())
        script.dialect = name
        _render(script)
    sessions = {t: [(s.seq, list(s.sql)) for s in steps] for t, steps in script.sessions().items()}
    return list(script.prep), sessions


def expected_trace(case: AnomalyCase, script: StepScript) -> Schedule:
    """The schedule an endpoint produces when no step blocks or fails."""
    if script.case_id != case.id:
        raise ValueError(f"script is for case {script.case_id}, not {case.id}")
    return script.schedule()
