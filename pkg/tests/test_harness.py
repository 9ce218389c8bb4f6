import json
import random

import pytest

from popcheck.casegen import Timing, plan_case
from popcheck.catalog import catalog
from popcheck.cycles import check_consistency
from popcheck.harness import (
    ENV_VAR, LETTERS, DecodeError, Endpoint, EndpointError, ExecutionTrace, StepResult,
    endpoint_from_env, infer_executed_schedule, judge, load_config, parse_endpoint, run_case,
    run_suite,
)
from popcheck.schedule import parse_schedule

FAST = Timing(delay=0.02, timeout=2.0)


def run(case, level, family="mvcc"):
    trace = run_case(plan_case(case, level, timing=FAST), f"sim:{family}")
    return trace, judge(trace)


@pytest.mark.parametrize("case,level,letter,executed", [
    (11, "rc", "P", "R1[x0] W2[y1] W2[x1] R1[y0] C1 C2"),
    (29, "rc", "A", "R1[x0] W2[y1] W2[x1] C2 R1[y1] C1"),
    (28, "ser", "R", "R1[x0] W2[x1] C2 A1"),
    (28, "rr", "R", "R1[x0] W2[x1] C2 A1"),
])
def test_panels(case, level, letter, executed):
    trace, out = run(case, level)
    assert out.letter == letter
    assert str(out.schedule) == executed


def test_step_wat_deadlock_picks_youngest():
    trace, out = run(26, "rc")
    assert out.letter == "D"
    assert (out.error.session, out.error.error_class) == (3, "deadlock")
    assert trace.final == {1: "committed", 2: "committed", 3: "aborted"}


def test_wait_die_family_times_out_instead():
    _, out = run(26, "rc", "wait-die")
    assert out.letter == "T"


def test_snapshot_timing_contrast():
    _, first_op = run(7, "rr", "mvcc")
    _, first_read = run(7, "rr", "mvcc-first-read")
    assert first_op.letter == "A" and [m.case_id for m in first_op.verdict.matches] == [31]
    assert first_read.letter == "P"


def test_infer_empty_trace():
    trace = ExecutionTrace(plan_case(11, timing=FAST), [])
    assert str(infer_executed_schedule(trace)) == ""


def test_infer_rejects_foreign_value():
    trace, _ = run(29, "rc")
    read = next(r for r in trace.results if r.rows)
    read.rows = [(0, 424242)]
    with pytest.raises(DecodeError):
        infer_executed_schedule(trace)
    read.rows = []
    with pytest.raises(DecodeError):
        infer_executed_schedule(trace)


def test_error_closes_the_transaction_once():
    script = plan_case(11, timing=FAST)
    res = [StepResult(1, 1, "ok", rows=[(0, 0)], order=1),
           StepResult(1, 4, "error", "rule", "x", order=2),
           StepResult(1, 5, "skipped")]
    trace = ExecutionTrace(script, res)
    assert str(infer_executed_schedule(trace)) == "R1[x0] A1"
    out = judge(trace)
    assert out.letter == "R"


def test_judge_letter_for_unknown_error_depends_on_latency():
    script = plan_case(1, timing=FAST)
    slow = StepResult(2, 2, "error", "other", "boom", latency=5.0, order=1)
    assert judge(ExecutionTrace(script, [slow])).letter == "T"
    fast = StepResult(2, 2, "error", "other", "boom", latency=0.0, order=1)
    assert judge(ExecutionTrace(script, [fast])).letter == "R"


@pytest.mark.slow
def test_judge_is_total_and_agrees_with_checker():
    m = run_suite([c.id for c in catalog()], ["ser", "rc"], "sim:mvcc", timing=Timing(0.01, 2.0),
                  keep_traces=True)
    assert m.complete
    for (cid, level), cell in m.cells.items():
        assert cell.letter in LETTERS
        out = cell.outcome
        assert check_consistency(parse_schedule(str(out.schedule))).consistent == out.verdict.consistent
        if out.error is None:
            assert (cell.letter == "A") == (not out.verdict.consistent)


def test_empty_suite():
    m = run_suite([], ["rc"], "sim:mvcc", timing=FAST)
    assert m.cells == {} and m.complete


def test_cells_are_isolated_from_run_order():
    ids = [1, 11, 26, 28, 29]
    base = run_suite(ids, ["rc", "ser"], "sim:mvcc", timing=FAST).letters()
    shuffled = ids[:]
    random.Random(2).shuffle(shuffled)
    again = run_suite(shuffled, ["ser", "rc"], "sim:mvcc", timing=FAST).letters()
    assert again == base


def test_parse_endpoint_forms():
    assert parse_endpoint("sim") == Endpoint("sim", "mvcc", "ansi")
    assert parse_endpoint("sim:2pl") == Endpoint("sim", "2pl", "ansi")
    assert parse_endpoint("postgresql://u@h/db").dialect == "postgresql"
    assert parse_endpoint("mysql+pymysql://u@h/db").dialect == "mysql"
    assert parse_endpoint("sqlite:////tmp/x.db").dialect == "sqlite"
    assert parse_endpoint("sqlite:////tmp/x.db", "ansi").dialect == "ansi"
    for bad in ("", "localhost:5432"):
        with pytest.raises(EndpointError):
            parse_endpoint(bad)
    with pytest.raises(KeyError):
        parse_endpoint("sim:nope")


def test_endpoint_from_env(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "sim:mysql")
    assert endpoint_from_env() == Endpoint("sim", "mysql", "ansi")
    monkeypatch.delenv(ENV_VAR)
    with pytest.raises(EndpointError):
        endpoint_from_env()


def test_load_config(tmp_path):
    p = tmp_path / "db.json"
    p.write_text(json.dumps({"endpoint": "sim:2pl", "level": "ser", "delay": 0.05}))
    assert load_config(p)["endpoint"] == "sim:2pl"
    p.write_text(json.dumps({"endpoint": "sim", "password": "x"}))
    with pytest.raises(EndpointError):
        load_config(p)


def test_sqlite_endpoint_runs_a_case(tmp_path):
    url = f"sqlite:///{tmp_path / 'cell.db'}"
    trace = run_case(plan_case(29, "rc", "sqlite", timing=Timing(0.05, 3.0)), url)
    out = judge(trace)
    # one writer at a time on the whole file: never a committed anomaly
    assert out.letter in LETTERS and out.letter != "A"
    assert out.verdict.consistent
