"""Group-frequency reweighing.

Each row falls into one of four cells by (protected group, label):
privileged-positive, unprivileged-positive, privileged-negative,
unprivileged-negative.  Every cell gets the weight

    w_cell = (group share of all rows) * (outcome share of all rows)
             / (cell share of all rows)
           = (N_group / N_total) * (N_outcome / N_cell)

which is the expected cell frequency under independence divided by the
observed one.  Under these weights the weighted favorable rate is the
same in both groups (the weighted statistical parity difference is
exactly zero) and the total weight mass equals the row count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataTable
from .errors import DegenerateGroupError

CELL_NAMES = (
    "privileged_positive",
    "unprivileged_positive",
    "privileged_negative",
    "unprivileged_negative",
)


@dataclass(frozen=True)
class GroupCounts:
    """Row counts by protected group and label, with their marginals."""

    total: int
    privileged: int
    unprivileged: int
    positive: int
    negative: int
    privileged_positive: int
    unprivileged_positive: int
    privileged_negative: int
    unprivileged_negative: int

    def __post_init__(self):
        checks = (
            self.privileged + self.unprivileged == self.total,
            self.positive + self.negative == self.total,
            self.privileged_positive + self.privileged_negative == self.privileged,
            self.unprivileged_positive + self.unprivileged_negative == self.unprivileged,
            self.privileged_positive + self.unprivileged_positive == self.positive,
            min(
                self.total,
                self.privileged,
                self.unprivileged,
                self.positive,
                self.negative,
                self.privileged_positive,
                self.unprivileged_positive,
                self.privileged_negative,
                self.unprivileged_negative,
            )
            >= 0,
        )
        if not all(checks):
            raise DegenerateGroupError(f"inconsistent group counts: {self}")


@dataclass(frozen=True)
class CellWeights:
    """One positive weight per (group, label) cell."""

    privileged_positive: float
    unprivileged_positive: float
    privileged_negative: float
    unprivileged_negative: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in CELL_NAMES}


def count_groups(table: DataTable) -> GroupCounts:
    """Tally the four (group, label) cells of a table."""
    if table.n_rows == 0:
        raise DegenerateGroupError("cannot count groups of an empty table")
    priv = table.privileged
    pos = table.labels == 1
    return GroupCounts(
        total=table.n_rows,
        privileged=int(priv.sum()),
        unprivileged=int((~priv).sum()),
        positive=int(pos.sum()),
        negative=int((~pos).sum()),
        privileged_positive=int((priv & pos).sum()),
        unprivileged_positive=int((~priv & pos).sum()),
        privileged_negative=int((priv & ~pos).sum()),
        unprivileged_negative=int((~priv & ~pos).sum()),
    )


def compute_weights(counts: GroupCounts) -> CellWeights:
    """Cell weights from counts; every cell must be populated."""
    cells = {
        "privileged_positive": (counts.privileged, counts.positive, counts.privileged_positive),
        "unprivileged_positive": (counts.unprivileged, counts.positive, counts.unprivileged_positive),
        "privileged_negative": (counts.privileged, counts.negative, counts.privileged_negative),
        "unprivileged_negative": (counts.unprivileged, counts.negative, counts.unprivileged_negative),
    }
    out = {}
    for name, (group, outcome, cell) in cells.items():
        if cell == 0:
            raise DegenerateGroupError(f"cell {name} is empty; weights undefined")
        out[name] = (group / counts.total) * (outcome / cell)
    return CellWeights(**out)


def apply_weights(table: DataTable, weights: CellWeights) -> DataTable:
    """Return the table with each row weighted by its cell's weight."""
    priv = table.privileged
    pos = table.labels == 1
    w = np.empty(table.n_rows, dtype=np.float64)
    w[priv & pos] = weights.privileged_positive
    w[~priv & pos] = weights.unprivileged_positive
    w[priv & ~pos] = weights.privileged_negative
    w[~priv & ~pos] = weights.unprivileged_negative
    return table.with_weights(w)


def reweigh(table: DataTable) -> DataTable:
    """Count, weight, and apply in one step."""
    return apply_weights(table, compute_weights(count_groups(table)))
