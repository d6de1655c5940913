"""Classification quality and group-fairness measures.

All inputs are 0/1 label vectors (1 = favorable) plus a boolean mask
marking the privileged group.  Difference-style metrics are oriented
unprivileged minus privileged, so negative values mean the unprivileged
group receives the favorable outcome less often.

Division conventions are explicit rather than silent: a 0/0 rate inside
a confusion matrix is reported as 0 and flagged in the report notes, a
disparate-impact ratio with a zero denominator becomes +inf (or NaN when
both rates are zero), and an all-zero benefit vector makes the Theil
index NaN.  NaN-valued metrics get no fair/unfair verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGroupError

# Inclusive [low, high] bands inside which a metric counts as fair.
FAIRNESS_RANGES: dict[str, tuple[float, float]] = {
    "SPD": (-0.10, 0.10),
    "DI": (0.80, 1.20),
    "AOD": (-0.10, 0.10),
    "EOD": (-0.10, 0.10),
    "TI": (0.0, 0.25),
}

METRIC_NAMES = ("SPD", "DI", "AOD", "EOD", "TI")


def _check_binary(name: str, values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DegenerateGroupError(f"{name} must be one-dimensional")
    if not np.isin(arr, (0, 1)).all():
        raise DegenerateGroupError(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class ConfusionCounts:
    """TP/FP/TN/FN tallies for one set of rows."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def _rate(self, num: int, den: int, label: str, notes: list[str]) -> float:
        if den == 0:
            notes.append(f"{label}: 0/0 reported as 0")
            return 0.0
        return num / den

    def tpr(self, label: str = "TPR", notes: list[str] | None = None) -> float:
        return self._rate(self.tp, self.tp + self.fn, label, notes if notes is not None else [])

    def fpr(self, label: str = "FPR", notes: list[str] | None = None) -> float:
        return self._rate(self.fp, self.fp + self.tn, label, notes if notes is not None else [])

    def tnr(self, label: str = "TNR", notes: list[str] | None = None) -> float:
        return self._rate(self.tn, self.tn + self.fp, label, notes if notes is not None else [])


def confusion_counts(y_true, y_pred, mask=None) -> ConfusionCounts:
    """Tally the confusion cells, optionally restricted to masked rows."""
    t = _check_binary("y_true", y_true)
    p = _check_binary("y_pred", y_pred)
    if t.shape != p.shape:
        raise DegenerateGroupError("y_true and y_pred have different lengths")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        t, p = t[m], p[m]
    return ConfusionCounts(
        tp=int(((t == 1) & (p == 1)).sum()),
        fp=int(((t == 0) & (p == 1)).sum()),
        tn=int(((t == 0) & (p == 0)).sum()),
        fn=int(((t == 1) & (p == 0)).sum()),
    )


def balanced_accuracy(y_true, y_pred) -> float:
    """(TPR + TNR) / 2 over all rows; requires both true classes."""
    c = confusion_counts(y_true, y_pred)
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise DegenerateGroupError("balanced accuracy needs both classes in y_true")
    return 0.5 * (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp))


def _group_masks(privileged) -> tuple[np.ndarray, np.ndarray]:
    priv = np.asarray(privileged, dtype=bool)
    if not priv.any() or priv.all():
        raise DegenerateGroupError("both protected groups must be present")
    return priv, ~priv


def selection_rates(y_pred, privileged) -> tuple[float, float]:
    """Favorable-prediction rates (unprivileged, privileged)."""
    p = _check_binary("y_pred", y_pred)
    priv, unpriv = _group_masks(privileged)
    return float(p[unpriv].mean()), float(p[priv].mean())


def statistical_parity_difference(y_pred, privileged) -> float:
    rate_u, rate_p = selection_rates(y_pred, privileged)
    return rate_u - rate_p


def disparate_impact(y_pred, privileged, notes: list[str] | None = None) -> float:
    """Ratio of favorable rates, unprivileged over privileged.

    0/positive is 0.0, positive/0 is +inf, and 0/0 is NaN; the non-finite
    cases are flagged through ``notes``.
    """
    rate_u, rate_p = selection_rates(y_pred, privileged)
    if rate_p == 0.0:
        if notes is not None:
            notes.append("DI: privileged favorable rate is 0; " + ("ratio 0/0 undefined" if rate_u == 0.0 else "ratio is +inf"))
        return math.nan if rate_u == 0.0 else math.inf
    return rate_u / rate_p


def average_odds_difference(y_true, y_pred, privileged, notes: list[str] | None = None) -> float:
    """Mean of the FPR gap and the TPR gap between the groups."""
    priv, unpriv = _group_masks(privileged)
    notes = notes if notes is not None else []
    cp = confusion_counts(y_true, y_pred, priv)
    cu = confusion_counts(y_true, y_pred, unpriv)
    fpr_gap = cu.fpr("unprivileged FPR", notes) - cp.fpr("privileged FPR", notes)
    tpr_gap = cu.tpr("unprivileged TPR", notes) - cp.tpr("privileged TPR", notes)
    return 0.5 * (fpr_gap + tpr_gap)


def equal_opportunity_difference(y_true, y_pred, privileged, notes: list[str] | None = None) -> float:
    """TPR gap between the groups (unprivileged minus privileged)."""
    priv, unpriv = _group_masks(privileged)
    notes = notes if notes is not None else []
    cu = confusion_counts(y_true, y_pred, unpriv)
    cp = confusion_counts(y_true, y_pred, priv)
    return cu.tpr("unprivileged TPR", notes) - cp.tpr("privileged TPR", notes)


def theil_index(y_true, y_pred, notes: list[str] | None = None) -> float:
    """Generalized-entropy inequality of the benefit b = y_pred - y_true + 1.

    Zero benefits contribute zero; a zero mean benefit leaves the index
    undefined (NaN, flagged).
    """
    t = _check_binary("y_true", y_true)
    p = _check_binary("y_pred", y_pred)
    if t.shape != p.shape:
        raise DegenerateGroupError("y_true and y_pred have different lengths")
    if t.size == 0:
        raise DegenerateGroupError("theil index of an empty prediction set")
    b = p.astype(np.float64) - t + 1.0
    mu = b.mean()
    if mu == 0.0:
        if notes is not None:
            notes.append("TI: all benefits are 0; index undefined")
        return math.nan
    ratio = b / mu
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ratio > 0.0, ratio * np.log(ratio), 0.0)
    return float(terms.mean())


def verdict(metric: str, value: float) -> str | None:
    """'fair' if the value sits inside the metric's band, else 'unfair';
    None when the value is NaN (undefined)."""
    low, high = FAIRNESS_RANGES[metric]
    if math.isnan(value):
        return None
    return "fair" if low <= value <= high else "unfair"


@dataclass(frozen=True)
class FairnessReport:
    """Balanced accuracy plus the five group-fairness measures, each with
    a fair/unfair verdict (None where the metric is undefined)."""

    balanced_accuracy: float
    statistical_parity_difference: float
    disparate_impact: float
    average_odds_difference: float
    equal_opportunity_difference: float
    theil_index: float
    verdicts: dict[str, str | None] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def value(self, metric: str) -> float:
        return {
            "BA": self.balanced_accuracy,
            "SPD": self.statistical_parity_difference,
            "DI": self.disparate_impact,
            "AOD": self.average_odds_difference,
            "EOD": self.equal_opportunity_difference,
            "TI": self.theil_index,
        }[metric]

    def as_dict(self) -> dict:
        return {
            "BA": self.balanced_accuracy,
            "SPD": self.statistical_parity_difference,
            "DI": self.disparate_impact,
            "AOD": self.average_odds_difference,
            "EOD": self.equal_opportunity_difference,
            "TI": self.theil_index,
            "verdicts": dict(self.verdicts),
            "notes": list(self.notes),
        }


def evaluate_predictions(y_true, y_pred, privileged) -> FairnessReport:
    """Score one prediction set against truth and group membership."""
    notes: list[str] = []
    ba = balanced_accuracy(y_true, y_pred)
    spd = statistical_parity_difference(y_pred, privileged)
    di = disparate_impact(y_pred, privileged, notes)
    aod = average_odds_difference(y_true, y_pred, privileged, notes)
    eod = equal_opportunity_difference(y_true, y_pred, privileged, notes)
    ti = theil_index(y_true, y_pred, notes)
    values = {"SPD": spd, "DI": di, "AOD": aod, "EOD": eod, "TI": ti}
    return FairnessReport(
        balanced_accuracy=ba,
        statistical_parity_difference=spd,
        disparate_impact=di,
        average_odds_difference=aod,
        equal_opportunity_difference=eod,
        theil_index=ti,
        verdicts={m: verdict(m, values[m]) for m in METRIC_NAMES},
        notes=tuple(dict.fromkeys(notes)),
    )
