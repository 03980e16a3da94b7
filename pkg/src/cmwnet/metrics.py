"""Evaluation reports and figure-data emission (CSV, not rendered plots)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .biasgen import Dataset
from .models import Classifier, WeightNet


@dataclass
class MetricsReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray        # (C, C), rows = true class


def evaluate(clf: Classifier, ds: Dataset) -> MetricsReport:
    """Argmax predictions scored against the clean labels."""
    if ds.n == 0:
        raise ValueError("empty test set")
    pred = np.argmax(clf.forward(ds.features), axis=1)
    C = ds.C
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (ds.clean_labels, pred), 1)
    correct = confusion.trace()
    class_counts = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), class_counts,
                          out=np.zeros(C), where=class_counts > 0)
    return MetricsReport(accuracy=correct / ds.n,
                         per_class_accuracy=per_class, confusion=confusion)


def weight_curve(wnet: WeightNet, loss_grid: np.ndarray) -> np.ndarray:
    """Head outputs over a loss grid; row k is family k's weighting curve."""
    grid = np.asarray(loss_grid, dtype=np.float64)
    if grid.size and (np.any(np.diff(grid) < 0) or grid[0] < 0):
        raise ValueError("loss grid must be ascending and nonnegative")
    return wnet.forward(grid).T  # (K, G)


def loss_histogram(ds: Dataset, clf: Classifier, bins: int = 50,
                   max_loss: float | None = None):
    """Per-class loss histograms split into clean and noisy samples.

    Returns (edges [bins+1], clean_counts [C x bins], noisy_counts [C x bins]).
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    losses = clf.losses(ds.features, ds.observed_labels)
    hi = max_loss if max_loss is not None else float(losses.max())
    edges = np.linspace(0.0, max(hi, 1e-12), bins + 1)
    clean_counts = np.zeros((ds.C, bins), dtype=np.int64)
    noisy_counts = np.zeros((ds.C, bins), dtype=np.int64)
    noisy = ds.noisy_mask()
    for c in range(ds.C):
        sel = ds.observed_labels == c
        clean_counts[c] = np.histogram(
            np.clip(losses[sel & ~noisy], edges[0], edges[-1]), bins=edges)[0]
        noisy_counts[c] = np.histogram(
            np.clip(losses[sel & noisy], edges[0], edges[-1]), bins=edges)[0]
    return edges, clean_counts, noisy_counts


# ---------------------------------------------------------------------------
# CSV emission


def write_weight_curve_csv(path, wnet: WeightNet, loss_grid: np.ndarray) -> None:
    table = weight_curve(wnet, loss_grid)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss"] + [f"family_{k}" for k in range(wnet.K)])
        for j, ell in enumerate(loss_grid):
            writer.writerow([f"{ell:.10g}"] +
                            [f"{table[k, j]:.10g}" for k in range(wnet.K)])


def write_histogram_csv(path, ds: Dataset, clf: Classifier, bins: int = 50) -> None:
    edges, clean_counts, noisy_counts = loss_histogram(ds, clf, bins)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "bin_lo", "bin_hi", "clean_count", "noisy_count"])
        for c in range(ds.C):
            for b in range(len(edges) - 1):
                writer.writerow([c, f"{edges[b]:.10g}", f"{edges[b + 1]:.10g}",
                                 int(clean_counts[c, b]), int(noisy_counts[c, b])])


def write_confusion_csv(path, report: MetricsReport) -> None:
    C = report.confusion.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"pred_{c}" for c in range(C)])
        for row in report.confusion:
            writer.writerow([int(v) for v in row])
