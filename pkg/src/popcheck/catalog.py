"""The 33 data anomaly test cases as executable data."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

from .cycles import (
    ConflictClass, GranularityClass, PopCycle, classify, enumerate_cycles, find_cycle,
    reduce_cycle,
)
from .pops import PopType, build_graph, extract_pops
from .schedule import Schedule, ScheduleError, format_schedule, parse_schedule, validate

RAT, WAT, IAT = ConflictClass.RAT, ConflictClass.WAT, ConflictClass.IAT
SDA, DDA, MDA = GranularityClass.SDA, GranularityClass.DDA, GranularityClass.MDA

Combo = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class AnomalyCase:
    id: int
    name: str
    conflict: ConflictClass
    granularity: GranularityClass
    template: Schedule
    pop_combo: Combo
    n_sessions: int = 2
    notes: str = ""
    alternates: tuple[Schedule, ...] = ()
    alt_combos: tuple[Combo, ...] = ()

    @property
    def combos(self) -> tuple[Combo, ...]:
        return (self.pop_combo,) + tuple(self.alt_combos)

    @property
    def committed_variant(self) -> bool:
        return "Committed" in self.name

    def combo_text(self) -> str:
        return " - ".join(f"{t}[{o}]" for t, o in self.pop_combo)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "conflict": self.conflict.value,
            "granularity": self.granularity.value,
            "template": format_schedule(self.template),
            "combo": [list(c) for c in self.pop_combo],
            "sessions": self.n_sessions,
            "notes": self.notes,
            "alternates": [format_schedule(a) for a in self.alternates],
            "alt_combos": [[list(c) for c in combo] for combo in self.alt_combos],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AnomalyCase":
        return cls(
            rec["id"], rec["name"], ConflictClass(rec["conflict"]),
            GranularityClass(rec["granularity"]), parse_schedule(rec["template"]),
            tuple(tuple(c) for c in rec["combo"]), rec.get("sessions", 2),
            rec.get("notes", ""), tuple(parse_schedule(a) for a in rec.get("alternates", ())),
            tuple(tuple(tuple(c) for c in combo) for combo in rec.get("alt_combos", ())),
        )


def _combo(text: str) -> Combo:
    return tuple((part[:-3], part[-2]) for part in text.split())


_STEP_NOTE = "N_obj ≥ 2, N_T ≥ 3"

# id, name, conflict, granularity, template, combo (ordered by the opening
# operation of each POP, objects named by first appearance), notes
_ROWS = [
    (1, "Dirty Read", RAT, SDA, "W1[x1] R2[x1] A1", "WR[x] RA[x]", ""),
    (2, "Non-repeatable Read", RAT, SDA, "R1[x0] W2[x1] R1[x1]", "RW[x] WR[x]", ""),
    (3, "Intermediate Read", RAT, SDA, "W1[x1] R2[x1] W1[x2]", "WR[x] RW[x]", ""),
    (4, "Intermediate Read Committed", RAT, SDA, "W1[x1] R2[x1] C2 W1[x2]", "WR[x] RCW[x]", ""),
    (5, "Lost Self Update", RAT, SDA, "W1[x1] W2[x2] R1[x2]", "WW[x] WR[x]", ""),
    (6, "Write-read Skew", RAT, DDA, "W1[x1] R2[x1] W2[y1] R1[y1]", "WR[x] WR[y]", ""),
    (7, "Write-read Skew Committed", RAT, DDA, "W1[x1] R2[x1] W2[y1] C2 R1[y1]", "WR[x] WCR[y]", ""),
    (8, "Double-write Skew 1", RAT, DDA, "W1[x1] R2[x1] W2[y1] W1[y2]", "WR[x] WW[y]", ""),
    (9, "Double-write Skew 1 Committed", RAT, DDA, "W1[x1] R2[x1] W2[y1] C2 W1[y2]", "WR[x] WCW[y]", ""),
    (10, "Double-write Skew 2", RAT, DDA, "W1[x1] W2[x2] W2[y1] R1[y1]", "WW[x] WR[y]", ""),
    (11, "Read Skew", RAT, DDA, "R1[x0] W2[x1] W2[y1] R1[y1]", "RW[x] WR[y]", ""),
    (12, "Read Skew 2", RAT, DDA, "W1[x1] R2[x1] R2[y0] W1[y1]", "WR[x] RW[y]", ""),
    (13, "Read Skew 2 Committed", RAT, DDA, "W1[x1] R2[x1] R2[y0] C2 W1[y1]", "WR[x] RCW[y]", ""),
    (14, "Step RAT", RAT, MDA, "W1[x1] W2[y1] W3[z1] R2[x1] R3[y1] R1[z1]", "WR[x] WR[y] WR[z]",
     _STEP_NOTE + ", contains a WR"),
    (15, "Dirty Write", WAT, SDA, "W1[x1] W2[x2] A1", "WW[x] WA[x]",
     "terminal of T1 may be A1 or C1; the commit variant is kept as an alternate"),
    (16, "Full Write", WAT, SDA, "W1[x1] W2[x2] W1[x3]", "WW[x] WW[x]", ""),
    (17, "Full Write Committed", WAT, SDA, "W1[x1] W2[x2] C2 W1[x3]", "WW[x] WCW[x]", ""),
    (18, "Lost Update", WAT, SDA, "R1[x0] W2[x1] W1[x2]", "RW[x] WW[x]", ""),
    (19, "Lost Self Update Committed", WAT, SDA, "W1[x1] W2[x2] C2 R1[x2]", "WW[x] WCR[x]", ""),
    (20, "Double-write Skew 2 Committed", WAT, DDA, "W1[x1] W2[x2] W2[y1] C2 R1[y1]", "WW[x] WCR[y]", ""),
    (21, "Full-write Skew", WAT, DDA, "W1[x1] W2[x2] W2[y1] W1[y2]", "WW[x] WW[y]", ""),
    (22, "Full-write Skew Committed", WAT, DDA, "W1[x1] W2[x2] W2[y1] C2 W1[y2]", "WW[x] WCW[y]", ""),
    (23, "Read-write Skew 1", WAT, DDA, "R1[x0] W2[x1] W2[y1] W1[y2]", "RW[x] WW[y]", ""),
    (24, "Read-write Skew 2", WAT, DDA, "W1[x1] W2[x2] R2[y0] W1[y1]", "WW[x] RW[y]", ""),
    (25, "Read-write Skew 2 Committed", WAT, DDA, "W1[x1] W2[x2] R2[y0] C2 W1[y1]", "WW[x] RCW[y]", ""),
    (26, "Step WAT", WAT, MDA, "W1[x1] W2[y1] W3[z1] W3[y2] W2[x2] W1[z2]", "WW[x] WW[y] WW[z]",
     _STEP_NOTE + ", contains a WW and no WR"),
    (27, "Non-repeatable Read Committed", IAT, SDA, "R1[x0] W2[x1] C2 R1[x1]", "RW[x] WCR[x]", ""),
    (28, "Lost Update Committed", IAT, SDA, "R1[x0] W2[x1] C2 W1[x2]", "RW[x] WCW[x]", ""),
    (29, "Read Skew Committed", IAT, DDA, "R1[x0] W2[x1] W2[y1] C2 R1[y1]", "RW[x] WCR[y]", ""),
    (30, "Read-write Skew 1 Committed", IAT, DDA, "R1[x0] W2[x1] W2[y1] C2 W1[y2]", "RW[x] WCW[y]", ""),
    (31, "Write Skew", IAT, DDA, "R1[x0] W2[x1] R2[y0] W1[y1]", "RW[x] RW[y]", ""),
    (32, "Write Skew Committed", IAT, DDA, "R1[x0] W2[x1] R2[y0] C2 W1[y1]", "RW[x] RCW[y]", ""),
    (33, "Step IAT", IAT, MDA, "R1[x0] R2[y0] R3[z0] W2[x1] W3[y1] W1[z1]", "RW[x] RW[y] RW[z]",
     _STEP_NOTE + ", no WR and no WW"),
]

_ALTERNATES = {15: ("W1[x1] W2[x2] C1",)}
_ALT_COMBOS = {15: ("WW[x] WC[x]",)}


def _build() -> tuple[AnomalyCase, ...]:
    cases = []
    for cid, name, conflict, gran, tmpl, combo, notes in _ROWS:
        s = parse_schedule(tmpl)
        cases.append(AnomalyCase(
            cid, name, conflict, gran, s, _combo(combo), len(s.txns), notes,
            tuple(parse_schedule(a) for a in _ALTERNATES.get(cid, ())),
            tuple(_combo(c) for c in _ALT_COMBOS.get(cid, ())),
        ))
    return tuple(cases)


_CATALOG = _build()
_BY_ID = {c.id: c for c in _CATALOG}


def catalog() -> list[AnomalyCase]:
    return list(_CATALOG)


def lookup(case_id: int) -> AnomalyCase:
    try:
        return _BY_ID[case_id]
    except KeyError:
        raise KeyError(f"no anomaly case {case_id} (ids run 1..33)") from None


def cycle_combo(c: PopCycle) -> Combo:
    """Ordered POP combination of a cycle.

    Edges are ordered by the schedule position of the operation that opens
    them; objects are renamed x, y, z, ... in that order.  This keeps apart
    cycles that are isomorphic as graphs but differ in which transaction
    moves first (Non-repeatable Read vs Intermediate Read).
    """
    edges = sorted(c.edges, key=lambda e: e.first_op)
    names: dict[str, str] = {}
    letters = "xyzuvw"
    for e in edges:
        names.setdefault(e.obj, letters[len(names)] if len(names) < len(letters) else f"o{len(names)}")
    return tuple((e.type.value, names[e.obj]) for e in edges)


def schedule_combo(s: Schedule) -> Counter:
    """Multiset of (type, object role) over every POP of ``s``."""
    names = {o: "xyzuvw"[i] for i, o in enumerate(s.objects)}
    return Counter((p.type.value, names[p.obj]) for p in extract_pops(s))


def _mda_case(c: PopCycle, cases) -> Optional[AnomalyCase]:
    if c.n_obj < 2 or c.n_t < 3:
        return None
    conflict, _ = classify(c)
    for case in cases:
        if case.granularity is MDA and case.conflict is conflict:
            return case
    return None


@dataclass(frozen=True)
class CatalogMatch:
    case_id: int
    name: str
    cycle: PopCycle

    def __str__(self) -> str:
        return f"#{self.case_id} {self.name}"


def match_cycle(c: PopCycle, cases=None) -> Optional[AnomalyCase]:
    cases = _CATALOG if cases is None else cases
    combo = cycle_combo(c)
    for case in cases:
        if case.granularity is not MDA and combo in case.combos:
            return case
    return _mda_case(c, cases)


def match_anomaly(s: Schedule, max_cycles: int = 2000, cases=None) -> list[CatalogMatch]:
    problems = validate(s)
    if problems:
        raise ScheduleError(f"invalid schedule: {problems[0]}", problems[0].index)
    found: dict[int, CatalogMatch] = {}
    for c in enumerate_cycles(build_graph(s), max_cycles):
        case = match_cycle(c, cases)
        if case is not None and case.id not in found:
            found[case.id] = CatalogMatch(case.id, case.name, c)
    return [found[k] for k in sorted(found)]


@dataclass
class CaseCheck:
    case_id: int
    name: str
    valid: bool = False
    cyclic: bool = False
    combo_ok: bool = False
    labels_ok: bool = False
    problems: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.valid and self.cyclic and self.combo_ok and self.labels_ok


def _check_template(case: AnomalyCase, tmpl: Schedule, res: CaseCheck):
    problems = validate(tmpl)
    if problems:
        res.problems += [str(p) for p in problems]
        return
    cyc = find_cycle(build_graph(tmpl))
    if cyc is None:
        res.problems.append(f"{format_schedule(tmpl)} is acyclic")
        return
    got = schedule_combo(tmpl)
    want = Counter(case.pop_combo)
    if case.granularity is not MDA:
        # the one cycle must also read in the tabulated order
        ordered = cycle_combo(cyc)
        if ordered not in case.combos or got != Counter(ordered):
            res.problems.append(f"combo {ordered} / {dict(got)} != {case.pop_combo}")
            res.combo_ok = False
    elif got != want:
        res.problems.append(f"combo {dict(got)} != {dict(want)}")
        res.combo_ok = False
    conflict, gran = classify(reduce_cycle(cyc, tmpl))
    if (conflict, gran) != (case.conflict, case.granularity):
        res.problems.append(f"labels {conflict.value}/{gran.value} != "
                            f"{case.conflict.value}/{case.granularity.value}")
        res.labels_ok = False


def verify_catalog(cases=None) -> list[CaseCheck]:
    cases = _CATALOG if cases is None else cases
    results = []
    for case in cases:
        res = CaseCheck(case.id, case.name, True, True, True, True)
        for tmpl in (case.template,) + tuple(case.alternates):
            before = len(res.problems)
            _check_template(case, tmpl, res)
            for p in res.problems[before:]:
                if "acyclic" in p:
                    res.cyclic = False
                elif "combo" not in p and "labels" not in p:
                    res.valid = False
        results.append(res)
    return results


def corrupted(case: AnomalyCase, template: str) -> AnomalyCase:
    """Copy of ``case`` with a different template, for self-tests."""
    return replace(case, template=parse_schedule(template, strict=False))
