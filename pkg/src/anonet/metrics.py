"""Segmentation metrics: F1 at a fixed threshold, AUROC and their aggregate.

Scores are pooled over all pixels of a validation set by default.  AUROC
uses tie-averaged ranks (equivalently: trapezoidal ROC integration, half
credit for ties) and is undefined when only one class is present.
"""

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class MetricsReport:
    dataset: str
    f1: float
    auroc: float            # None when one class is missing
    counts: tuple           # (TP, FP, FN, TN)
    epoch: int = 0
    degenerate: bool = False
    pooling: str = "pixel"  # "pixel" | "image"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["counts"] = tuple(d["counts"])
        return cls(**d)


def f1_score(scores, truth, threshold=0.0):
    """F1 of (score > threshold) against binary truth; returns (f1, counts).

    counts = (TP, FP, FN, TN).  When no positives are predicted and none
    exist (precision + recall undefined) the result is 0 by convention;
    callers can detect it via counts.
    """
    scores = np.asarray(scores).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if scores.shape != truth.shape:
        raise ValueError(f"scores {scores.shape} vs truth {truth.shape}")
    pred = scores > threshold
    pos = truth > 0.5
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    denom = 2 * tp + fp + fn
    f1 = 2.0 * tp / denom if denom else 0.0
    return f1, (tp, fp, fn, tn)


def auroc(scores, truth):
    """Probability a random positive outscores a random negative (ties: 1/2).

    Returns None when truth contains a single class.  Computed from
    tie-averaged ranks, which equals trapezoidal ROC integration.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth).reshape(-1) > 0.5
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(truth.size, dtype=np.float64)
    # average the 1-based ranks within each tie group
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [truth.size]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    rank_sum = ranks[truth].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def avg_f1_auroc(reports):
    """Mean of per-dataset F1s, mean of available AUROCs, then their mean.

    With no AUROC present anywhere, the aggregate is just the F1 mean.
    """
    if not reports:
        raise ValueError("need at least one report")
    f1_mean = sum(r.f1 for r in reports) / len(reports)
    aurocs = [r.auroc for r in reports if r.auroc is not None]
    if not aurocs:
        return f1_mean
    return 0.5 * (f1_mean + sum(aurocs) / len(aurocs))


REPORT_COLUMNS = ["dataset", "epoch", "f1", "auroc", "tp", "fp", "fn", "tn",
                  "degenerate", "pooling"]


def _report_row(r):
    tp, fp, fn, tn = r.counts
    return {"dataset": r.dataset, "epoch": r.epoch, "f1": repr(float(r.f1)),
            "auroc": "" if r.auroc is None else repr(float(r.auroc)),
            "tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "degenerate": int(r.degenerate), "pooling": r.pooling}


def write_reports_csv(reports, path):
    """Write reports as CSV in a fixed column order (floats via repr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(_report_row(r))


def write_reports_jsonl(reports, path):
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_reports_jsonl(path):
    with open(path) as fh:
        return [MetricsReport.from_dict(json.loads(line)) for line in fh if line.strip()]
