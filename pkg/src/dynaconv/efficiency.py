"""MAC accounting per permutation and the per-sample efficiency oracle:
the cheapest configuration that preserves a reference model's prediction."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .analyses import bounds
from .errors import StateError
from .model import Model
from .sweep import SweepResult


def cost_table(model: Model, perms, input_hw=None) -> np.ndarray:
    """Analytic per-sample MAC totals (convolutions plus linear head),
    chained through the shape algebra; no forward passes run."""
    return np.array([model.plan_macs(p.assignment(), input_hw) for p in perms],
                    dtype=np.int64)


@dataclass
class EfficiencyResult:
    accuracy: float
    avg_macs: float
    choice: np.ndarray          # per-sample chosen permutation index
    reference_accuracy: float
    reference_avg_macs: float

    @property
    def speedup(self) -> float:
        return self.reference_avg_macs / self.avg_macs if self.avg_macs else float("inf")


def efficiency_oracle(sr: SweepResult, costs: np.ndarray,
                      reference_preds: np.ndarray,
                      reference_costs: np.ndarray) -> EfficiencyResult:
    """Per sample, the minimum-cost permutation predicting exactly what the
    reference predicts (ties: lowest index).  The reference configuration
    must be part of the sweep, so a feasible choice always exists."""
    reference_preds = np.asarray(reference_preds)
    if reference_preds.shape != (sr.n,):
        raise StateError(f"reference predictions must be ({sr.n},)")
    agree = sr.preds == reference_preds[:, None]
    if not agree.any(axis=1).all():
        missing = int(np.flatnonzero(~agree.any(axis=1))[0])
        raise StateError(
            f"sample {missing}: no permutation matches the reference prediction; "
            "the reference configuration is not part of this sweep")
    masked = np.where(agree, costs[None, :], np.iinfo(np.int64).max)
    choice = masked.argmin(axis=1)
    accuracy = float((reference_preds == sr.labels).mean())
    return EfficiencyResult(
        accuracy=accuracy,
        avg_macs=float(costs[choice].mean()),
        choice=choice,
        reference_accuracy=accuracy,
        reference_avg_macs=float(np.asarray(reference_costs).mean()))


@dataclass
class FrontierPoint:
    label: str
    perm_index: int             # -1 for oracle / per-sample points
    accuracy: float
    avg_macs: float


def frontier(sr: SweepResult, costs: np.ndarray,
             reference_indices=None) -> list[FrontierPoint]:
    """Accuracy-vs-cost points: one static point per permutation, the
    best-case oracle point, and efficient variants of the selected
    references plus of the best-case oracle itself."""
    points = [FrontierPoint("static", j, float(acc), float(costs[j]))
              for j, acc in enumerate(sr.static_accuracies())]
    b = bounds(sr)
    rows = np.arange(sr.n)
    best_cost = float(costs[b.best_pick].mean())
    points.append(FrontierPoint("best-case", -1, b.best, best_cost))
    for j in () if reference_indices is None else reference_indices:
        ref_preds = sr.preds[:, j]
        res = efficiency_oracle(sr, costs, ref_preds, np.full(sr.n, costs[j]))
        points.append(FrontierPoint(f"efficient-of-{j}", j, res.accuracy, res.avg_macs))
    best_preds = sr.preds[rows, b.best_pick]
    res = efficiency_oracle(sr, costs, best_preds, costs[b.best_pick])
    points.append(FrontierPoint("efficient-of-best", -1, res.accuracy, res.avg_macs))
    return points


def write_frontier_csv(path, points: list[FrontierPoint]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "perm_index", "accuracy", "avg_gmacs"])
        for p in points:
            w.writerow([p.label, p.perm_index, f"{p.accuracy:.6f}",
                        f"{p.avg_macs / 1e9:.9f}"])
