"""Matplotlib renderings of the delimited report outputs.

Every CLI command that writes a CSV/JSON report also drops the matching
figure next to it (unless figures are switched off): cost curves for a
training run, ROC curves for an evaluation, RSSI and feature histograms
for simulated data.  The CSV/JSON files stay the canonical interface; the
figures are a convenience rendering of the same numbers.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150

_CONDITION_COLORS = {
    "LOS": "tab:green",
    "NLOS_STRUCTURE": "tab:red",
    "NLOS_BODY": "tab:orange",
}


def _save(fig, path):
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


def save_cost_curves(report, path) -> None:
    """Train/validation/test cost per epoch, minimum-validation epoch marked."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    epochs = np.arange(1, report.epochs_run + 1)
    ax.plot(epochs, report.train_costs, label="train", lw=1.2)
    ax.plot(epochs, report.val_costs, label="validation", lw=1.2)
    if np.any(np.isfinite(report.test_costs)):
        ax.plot(epochs, report.test_costs, label="test", lw=1.2, alpha=0.8)
    if report.best_epoch:
        ax.axvline(report.best_epoch, color="k", ls=":", lw=1.0)
        ax.plot([report.best_epoch], [report.best_val_cost], "kx", ms=7,
                label=f"selected (epoch {report.best_epoch})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy cost")
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)


def save_roc(curves, path) -> None:
    """One or more (label, RocCurve) pairs on a single ROC plot."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    for label, curve in curves:
        ax.plot(curve.fpr, curve.tpr, lw=1.4, label=f"{label} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="gray", ls="--", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    _save(fig, path)


def save_rssi_histogram(sessions, path) -> None:
    """Per-condition RSSI distributions of simulated packet sessions."""
    by_condition: dict[str, list[int]] = {}
    for session in sessions:
        for r in session:
            by_condition.setdefault(r.condition.name, []).append(r.rssi)
    if not by_condition:
        return
    lo = min(min(v) for v in by_condition.values())
    hi = max(max(v) for v in by_condition.values())
    bins = np.arange(lo - 0.5, hi + 1.5)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, values in sorted(by_condition.items()):
        ax.hist(values, bins=bins, density=True, alpha=0.55, label=name,
                color=_CONDITION_COLORS.get(name))
    ax.set_xlabel("RSSI")
    ax.set_ylabel("relative frequency")
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)


def save_feature_histogram(rows, feature: str, path) -> None:
    """Class-conditional histogram of raw feature values (rows of
    (value, label) pairs as produced by the baseline scorer)."""
    values = np.array([v for v, _ in rows], dtype=float)
    labels = np.array([l for _, l in rows], dtype=int)
    if values.size == 0:
        return
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    bins = np.histogram_bin_edges(values, bins=40)
    ax.hist(values[labels == 1], bins=bins, density=True, alpha=0.55,
            label="LOS", color="tab:green")
    ax.hist(values[labels != 1], bins=bins, density=True, alpha=0.55,
            label="NLOS", color="tab:red")
    ax.set_xlabel(f"{feature} feature value")
    ax.set_ylabel("relative frequency")
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)
