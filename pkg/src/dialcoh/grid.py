"""Grid representations of a dialogue.

Rows are either turns or DA units; columns are entities (in order of first
appearance).  Cells are plain strings: a role (``S``/``O``/``X``), ``X`` for
presence, a DA tag, or ``-`` when the entity is absent from the row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .corpus import ABSENT, DAUnit, Dialogue, EntityMention

NO_ENTITIES = "no_entities"
ALL_DAS = "all_das"

_PRECEDENCE = {"S": 0, "O": 1, "X": 2}


class GridError(ValueError):
    pass


class RowUnit(str, Enum):
    TURN = "turn"
    DA_UNIT = "da_unit"


class CellVocab(str, Enum):
    ROLE = "role"
    PRESENCE = "presence"
    DA = "da"


@dataclass(frozen=True)
class GridSpec:
    row_unit: RowUnit
    cell_vocab: CellVocab
    only_das: bool = False
    tagset_id: str | None = None

    def __post_init__(self):
        if self.only_das and (self.row_unit is not RowUnit.DA_UNIT or self.cell_vocab is not CellVocab.DA):
            raise GridError("only_das grids must use DA-unit rows and DA cells")
        if self.cell_vocab is CellVocab.DA and self.row_unit is not RowUnit.DA_UNIT:
            raise GridError("DA cells need DA-unit rows")


# The single-grid models.  The two "+ Only DAs" models are feature-level
# concatenations and live in ``features``.
GRID_MODELS = {
    "T-Grid:role": GridSpec(RowUnit.TURN, CellVocab.ROLE),
    "T-Grid:presence": GridSpec(RowUnit.TURN, CellVocab.PRESENCE),
    "D-Grid:role": GridSpec(RowUnit.DA_UNIT, CellVocab.ROLE),
    "D-Grid:DA": GridSpec(RowUnit.DA_UNIT, CellVocab.DA),
    "Only-DAs": GridSpec(RowUnit.DA_UNIT, CellVocab.DA, only_das=True),
}


@dataclass(frozen=True)
class Grid:
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    cells: tuple[tuple[str, ...], ...]
    spec: GridSpec

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.columns)

    def column(self, j: int) -> tuple[str, ...]:
        return tuple(row[j] for row in self.cells)

    def to_json(self) -> dict:
        return {"rows": list(self.rows), "columns": list(self.columns),
                "cells": [list(r) for r in self.cells]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, separators=(",", ":"))

    def to_text(self) -> str:
        """Aligned plain-text table, one line per row."""
        label_w = max([len(r) for r in self.rows] + [0])
        widths = [max([len(c)] + [len(row[j]) for row in self.cells]) for j, c in enumerate(self.columns)]
        lines = [" ".join([" " * label_w, "|"] + [c.ljust(w) for c, w in zip(self.columns, widths)]).rstrip()]
        lines.append("-" * len(lines[0]))
        for label, row in zip(self.rows, self.cells):
            lines.append(" ".join([label.ljust(label_w), "|"] + [c.ljust(w) for c, w in zip(row, widths)]).rstrip())
        return "\n".join(lines) + "\n"


def most_prominent_role(roles: Iterable[str]) -> str:
    """S beats O beats X."""
    roles = list(roles)
    if not roles:
        raise GridError("no roles given")
    try:
        return min(roles, key=_PRECEDENCE.__getitem__)
    except KeyError as exc:
        raise GridError(f"unknown role {exc.args[0]!r}") from None


def _row_spans(d: Dialogue, row_unit: RowUnit) -> tuple[list[str], list[tuple[DAUnit, ...]]]:
    if row_unit is RowUnit.TURN:
        return [f"t{i + 1}" for i in range(len(d.turns))], [t.units for t in d.turns]
    units = d.units
    return [f"da{i + 1}" for i in range(len(units))], [(u,) for u in units]


def _mentions_by_entity(span: tuple[DAUnit, ...]) -> dict[str, list[EntityMention]]:
    out: dict[str, list[EntityMention]] = {}
    for unit in span:
        for m in unit.mentions:
            out.setdefault(m.entity_id, []).append(m)
    return out


def build_grid(d: Dialogue, spec: GridSpec) -> Grid:
    if spec.tagset_id is not None and spec.tagset_id != d.tagset_id:
        raise GridError(f"grid spec tagset {spec.tagset_id!r} != dialogue tagset {d.tagset_id!r}")
    labels, spans = _row_spans(d, spec.row_unit)

    if spec.only_das:
        cells = tuple((span[0].da_tag,) for span in spans)
        return Grid(tuple(labels), (ALL_DAS,), cells, spec)

    entities = d.entity_ids()
    rows = []
    for span in spans:
        present = _mentions_by_entity(span)
        if spec.cell_vocab is CellVocab.ROLE:
            row = [most_prominent_role(m.role for m in present[e]) if e in present else ABSENT
                   for e in entities]
        elif spec.cell_vocab is CellVocab.PRESENCE:
            row = ["X" if e in present else ABSENT for e in entities]
        else:
            tag = span[0].da_tag
            row = [tag if e in present else ABSENT for e in entities]
            row.append(ABSENT if present else tag)
        rows.append(tuple(row))

    columns = entities + ((NO_ENTITIES,) if spec.cell_vocab is CellVocab.DA else ())
    return Grid(tuple(labels), columns, tuple(rows), spec)
