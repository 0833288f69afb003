"""Binary LOS/NLOS decision metrics, ROC construction, threshold selection.

Convention everywhere: a window with score >= alpha is declared LOS (the
positive class, label 1); ties land on the LOS side.  TPR is the LOS
detection rate, TNR the NLOS detection rate, and the headline number is
their mean, avg_rate = (TPR + TNR) / 2, which is insensitive to class
imbalance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SingleClassError

OBJECTIVES = ("avg_rate", "accuracy")

# numpy renamed trapz to trapezoid in 2.0
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def classify(scores, alpha: float) -> np.ndarray:
    """Boolean LOS decisions for an array of scores."""
    return np.asarray(scores) >= alpha


def _checked(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = scores[labels == 1]
    neg = scores[labels != 1]
    if pos.size == 0 or neg.size == 0:
        raise SingleClassError(
            f"need both classes to evaluate, got {pos.size} LOS / {neg.size} NLOS"
        )
    return np.sort(pos), np.sort(neg)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn)

    @property
    def tnr(self) -> float:
        return self.tn / (self.tn + self.fp)

    @property
    def fpr(self) -> float:
        return 1.0 - self.tnr

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / (self.tp + self.fn + self.tn + self.fp)

    @property
    def avg_rate(self) -> float:
        return 0.5 * (self.tpr + self.tnr)


def confusion(scores, labels, alpha: float) -> ConfusionCounts:
    """Counts for the rule score >= alpha -> LOS.  Needs both classes."""
    pos, neg = _checked(scores, labels)
    tp = int(pos.size - np.searchsorted(pos, alpha, side="left"))
    fp = int(neg.size - np.searchsorted(neg, alpha, side="left"))
    return ConfusionCounts(tp=tp, fn=int(pos.size - tp), tn=int(neg.size - fp), fp=fp)


@dataclass
class RocCurve:
    """Operating points swept over every distinct score, plus sentinels.

    thresholds[0] is +inf (nothing LOS, point (0,0)); the last is -inf
    (everything LOS, point (1,1)).  fpr and tpr are non-decreasing and the
    AUC is the trapezoidal area under the curve.
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    alpha_star: dict

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("threshold,fpr,tpr\n")
            for t, f, d in zip(self.thresholds, self.fpr, self.tpr):
                fh.write(f"{float(t)!r},{float(f)!r},{float(d)!r}\n")


def _counts_at(thresholds, pos, neg):
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg, thresholds, side="left")
    return tp, fp


def _rates_at(thresholds, pos, neg):
    tp, fp = _counts_at(thresholds, pos, neg)
    return fp / neg.size, tp / pos.size


def roc(scores, labels) -> RocCurve:
    """Full ROC over the distinct scores, with +/-inf sentinel endpoints."""
    pos, neg = _checked(scores, labels)
    uniq = np.unique(np.concatenate([pos, neg]))
    thresholds = np.concatenate([[np.inf], uniq[::-1], [-np.inf]])
    fpr, tpr = _rates_at(thresholds, pos, neg)
    auc = float(_trapezoid(tpr, fpr))
    curve = RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc, alpha_star={})
    for objective in OBJECTIVES:
        curve.alpha_star[objective] = select_threshold(scores, labels, objective)
    return curve


def _objective_keys(objective, tp, fp, n_pos, n_neg):
    # Integer-valued monotone transforms of the objectives, so that exact
    # ties stay exact ties and argmax picks the smallest candidate.
    if objective == "avg_rate":
        return tp * n_neg - fp * n_pos
    if objective == "accuracy":
        return tp - fp
    raise ValueError(f"unknown objective {objective!r}, pick one of {OBJECTIVES}")


def select_threshold(scores, labels, objective: str = "avg_rate") -> float:
    """Best alpha for the objective over all achievable decision rules.

    Candidates are the midpoints between consecutive distinct scores plus
    one sentinel below the minimum (everything LOS) and one above the
    maximum (nothing LOS); ties pick the smallest alpha.
    """
    pos, neg = _checked(scores, labels)
    uniq = np.unique(np.concatenate([pos, neg]))
    candidates = np.concatenate(
        [[uniq[0] - 1.0], 0.5 * (uniq[1:] + uniq[:-1]), [uniq[-1] + 1.0]]
    )
    tp, fp = _counts_at(candidates, pos, neg)
    keys = _objective_keys(objective, tp, fp, pos.size, neg.size)
    return float(candidates[int(np.argmax(keys))])


def summarize(scores, labels, alpha: float, extras: dict | None = None) -> dict:
    """Metric dictionary for one scored set at one operating point."""
    counts = confusion(scores, labels, alpha)
    curve = roc(scores, labels)
    summary = {
        "auc": curve.auc,
        "alpha_star": alpha,
        "tpr": counts.tpr,
        "tnr": counts.tnr,
        "fpr": counts.fpr,
        "accuracy": counts.accuracy,
        "avg_rate": counts.avg_rate,
        "counts": {"tp": counts.tp, "fn": counts.fn, "tn": counts.tn, "fp": counts.fp},
        "n_windows": int(len(np.asarray(scores))),
    }
    if extras:
        summary.update(extras)
    return summary


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
