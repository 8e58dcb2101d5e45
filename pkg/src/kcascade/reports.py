"""Tab-separated evaluation reports.

``stage_rows`` scores every stage on the whole evaluation set on its own;
``pipeline_rows`` follows patterns through the cascade and reports the
decision reached after each stage; ``summary_rows`` compares the cascade
with the f-classifier alone.
"""
from __future__ import annotations

import math

import numpy as np

from . import kernel_net
from .cascade import stage_cost, stage_decisions
from .metrics import conservation_metrics, detection_metrics, eer, fmt_pct

STAGE_COLUMNS = ("stage", "arch", "support", "macs", "stage_cost", "cons", "rFA",
                 "DR", "FA", "EER", "time_ms")
PIPELINE_COLUMNS = ("stage", "reached", "accepted", "DR", "FA", "EER")
SUMMARY_COLUMNS = ("classifier", "DR", "FA", "EER", "mean_kernel_evals", "mean_cost",
                   "cost_ratio", "time_ms")


def _arch(layer_sizes):
    return "-".join(str(n) for n in layer_sizes)


def stage_rows(cascade, exhaustive, ground_truth, times_ms=None):
    decisions = stage_decisions(cascade, exhaustive)
    f_dec = decisions[:, -1]
    rows = []
    for t, stage in enumerate(cascade.stages):
        dr, fa = detection_metrics(decisions[:, t], ground_truth)
        if stage.is_f:
            cons = rfa = math.nan
        else:
            cons, rfa = conservation_metrics(decisions[:, t], f_dec)
        rows.append({
            "stage": t + 1, "arch": _arch(stage.arch), "support": stage.num_support,
            "macs": kernel_net.macs(stage.arch), "stage_cost": stage_cost(stage),
            "cons": cons, "rFA": rfa, "DR": dr, "FA": fa, "EER": eer(dr, fa),
            "time_ms": math.nan if times_ms is None else times_ms[t],
        })
    return rows


def pipeline_rows(cascade, outcome, ground_truth):
    rows = []
    consumed = outcome.stages_consumed
    T = cascade.num_stages
    for t in range(1, T + 1):
        reached = consumed >= t
        # declared positive so far: passed stages 1..t
        passed = (consumed > t) | (outcome.labels > 0)
        pred = np.where(passed, 1, -1)
        dr, fa = detection_metrics(pred, ground_truth)
        rows.append({"stage": t, "reached": int(reached.sum()), "accepted": int(passed.sum()),
                     "DR": dr, "FA": fa, "EER": eer(dr, fa)})
    return rows


def summary_rows(cascade, outcome, exhaustive, ground_truth, times_ms=None):
    f_dec = stage_decisions(cascade, exhaustive)[:, -1]
    f_stage = cascade.stages[-1]
    f_cost = float(stage_cost(f_stage))
    rows = []
    for name, pred, evals, cost, key in (
            ("f-network", f_dec, float(f_stage.num_support), f_cost, "f"),
            ("cascade", outcome.labels, float(np.mean(outcome.kernel_evals)),
             float(np.mean(outcome.cost)), "cascade")):
        dr, fa = detection_metrics(pred, ground_truth)
        rows.append({"classifier": name, "DR": dr, "FA": fa, "EER": eer(dr, fa),
                     "mean_kernel_evals": evals, "mean_cost": cost,
                     "cost_ratio": cost / f_cost if f_cost else math.nan,
                     "time_ms": math.nan if times_ms is None else times_ms[key]})
    return rows


_PCT = {"cons", "rFA", "DR", "FA", "EER"}


def _cell(key, value):
    if key in _PCT:
        return fmt_pct(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        if key == "cost_ratio":
            return f"{value:.4f}"
        return f"{value:.3f}"
    return str(value)


def render_tsv(rows, columns, comments=()):
    lines = [f"# {c}" for c in comments]
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(_cell(c, row[c]) for c in columns))
    return "\n".join(lines) + "\n"


def read_tsv(text):
    """Parse a report back into a list of string dicts (comments skipped)."""
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    header = lines[0].split("\t")
    return [dict(zip(header, l.split("\t"))) for l in lines[1:]]
