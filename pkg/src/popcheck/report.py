"""Outcome matrices and their text / record renderings."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .catalog import lookup

CELL_MARKS = ("A", "P", "R", "D", "T", "!")   # "!" marks a cell that could not run


@dataclass
class Cell:
    letter: str
    outcome: Any = None                 # harness.Outcome
    trace: Any = None                   # harness.ExecutionTrace, when kept
    error: Optional[str] = None

    def __post_init__(self):
        if self.letter not in CELL_MARKS:
            raise ValueError(f"bad cell letter {self.letter!r}")


@dataclass
class ReportMatrix:
    cases: list[int]
    levels: list[str]
    endpoint: str = ""
    timing: Any = None
    cells: dict = field(default_factory=dict)

    def set(self, case_id: int, level: str, cell: Cell):
        if case_id not in self.cases or level not in self.levels:
            raise KeyError(f"no cell ({case_id}, {level})")
        self.cells[(case_id, level)] = cell

    def letter(self, case_id: int, level: str) -> str:
        return self.cells[(case_id, level)].letter

    def letters(self) -> dict[tuple[int, str], str]:
        return {k: c.letter for k, c in self.cells.items()}

    @property
    def complete(self) -> bool:
        return all((c, l) in self.cells for c in self.cases for l in self.levels)

    def count(self, letter: str) -> int:
        return sum(1 for c in self.cells.values() if c.letter == letter)

    def render_text(self) -> str:
        names = {c: lookup(c).name for c in self.cases}
        w = max([len(n) for n in names.values()] + [4])
        head = f"{'#':>3}  {'case':<{w}}  " + "  ".join(f"{l.upper():>3}" for l in self.levels)
        lines = [head, "-" * len(head)]
        for c in self.cases:
            row = "  ".join(f"{self.cells[(c, l)].letter if (c, l) in self.cells else '?':>3}"
                            for l in self.levels)
            lines.append(f"{c:>3}  {names[c]:<{w}}  {row}")
        tally = ", ".join(f"{x}={self.count(x)}" for x in CELL_MARKS if self.count(x))
        lines.append(f"endpoint {self.endpoint}; {tally}")
        return "\n".join(lines)

    def records(self) -> list[dict]:
        out = []
        for c in self.cases:
            case = lookup(c)
            for l in self.levels:
                cell = self.cells.get((c, l))
                rec = {"case": c, "name": case.name, "conflict": case.conflict.value,
                       "granularity": case.granularity.value, "level": l,
                       "outcome": cell.letter if cell else None, "endpoint": self.endpoint}
                if cell is not None and cell.outcome is not None:
                    rec["executed"] = str(cell.outcome.schedule)
                    rec["verdict"] = cell.outcome.verdict.to_record()
                if cell is not None and cell.error:
                    rec["error"] = cell.error
                out.append(rec)
        return out

    def render_records(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def catalog_records(cases) -> str:
    return "".join(json.dumps(c.to_record(), sort_keys=True) + "\n" for c in cases)


def catalog_text(cases) -> str:
    w = max(len(c.name) for c in cases) if cases else 4
    lines = []
    for c in cases:
        line = (f"{c.id:>3}  {c.name:<{w}}  {c.conflict.value}/{c.granularity.value}  "
                f"{c.combo_text():<24}  {c.template}")
        if c.notes:
            line += f"  ({c.notes})"
        lines.append(line)
    return "\n".join(lines)
