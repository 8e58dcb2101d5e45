"""Detection measures: DR, FA, EER and their f-relative versions cons, rFA.

All rates are percentages. A rate whose denominator is empty is undefined
and comes back as NaN together with an :class:`UndefinedRateWarning`,
never as a silent 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


class UndefinedRateWarning(RuntimeWarning):
    pass


@dataclass
class ConfusionSummary:
    tp: int
    fp: int
    tn: int
    fn: int
    dr: float
    fa: float
    eer: float
    cons: float = math.nan
    rfa: float = math.nan
    cost: float = math.nan
    wall_time: float = math.nan
    extra: dict = field(default_factory=dict)


def _pm1(v, name):
    v = np.asarray(v)
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be a 1-d vector")
    if not np.all(np.isin(v, (-1, 1))):
        raise InvalidInputError(f"{name} must contain only -1/+1")
    return v


def confusion_counts(predictions, ground_truth):
    p = _pm1(predictions, "predictions")
    g = _pm1(ground_truth, "ground_truth")
    if p.shape != g.shape:
        raise InvalidInputError("predictions and ground truth differ in length")
    tp = int(np.sum((p > 0) & (g > 0)))
    fp = int(np.sum((p > 0) & (g < 0)))
    tn = int(np.sum((p < 0) & (g < 0)))
    fn = int(np.sum((p < 0) & (g > 0)))
    return tp, fp, tn, fn


def _rate(num, den, what):
    if den == 0:
        warnings.warn(f"{what} undefined: reference has no samples of that class",
                      UndefinedRateWarning, stacklevel=3)
        return math.nan
    return 100.0 * num / den


def detection_metrics(predictions, ground_truth):
    """Detection rate and false-alarm rate, in percent."""
    tp, fp, tn, fn = confusion_counts(predictions, ground_truth)
    return _rate(tp, tp + fn, "DR"), _rate(fp, fp + tn, "FA")


def eer(dr, fa):
    return (fa + (100.0 - dr)) / 2.0


def conservation_metrics(g_predictions, f_predictions):
    """cons and rFA: DR and FA of ``g`` measured against ``f``'s decisions."""
    tp, fp, tn, fn = confusion_counts(g_predictions, f_predictions)
    return _rate(tp, tp + fn, "cons"), _rate(fp, fp + tn, "rFA")


def summarize(predictions, ground_truth, f_predictions=None, cost=math.nan, wall_time=math.nan):
    tp, fp, tn, fn = confusion_counts(predictions, ground_truth)
    dr, fa = detection_metrics(predictions, ground_truth)
    cons = rfa = math.nan
    if f_predictions is not None:
        cons, rfa = conservation_metrics(predictions, f_predictions)
    return ConfusionSummary(tp, fp, tn, fn, dr, fa, eer(dr, fa), cons, rfa, cost, wall_time)


def fmt_pct(x):
    """Two-decimal percentage, ``-`` for omitted or undefined values."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.2f}"
