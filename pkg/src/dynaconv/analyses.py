"""Post-sweep analyses: quality scores, oracle bounds, unique-prediction
histograms, greedy permutation accumulation, the permutation budget rule,
combined attribute spaces, and preference reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import ATTRIBUTES
from .sweep import Permutation, SweepResult


def quality(t: float, correct: bool) -> float:
    """Quality of one configuration's output: the true-class confidence,
    plus 1 when the prediction is correct."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"confidence {t} outside [0, 1]")
    return t + 1.0 if correct else t


# ---------------------------------------------------------------------------
# oracle bounds

@dataclass
class Bounds:
    worst: float
    median: float
    best: float
    worst_pick: np.ndarray
    median_pick: np.ndarray
    best_pick: np.ndarray

    @property
    def volatility(self) -> float:
        return self.best - self.worst


def bounds(sr: SweepResult) -> Bounds:
    """Best / median / worst-case accuracy under per-sample quality-oracle
    selection.  Ties pick the lowest permutation index; the median of an
    even count takes the lower middle after an ascending sort."""
    q = sr.quality()
    best_pick = q.argmax(axis=1)
    worst_pick = q.argmin(axis=1)
    order = np.lexsort((np.broadcast_to(np.arange(sr.m), q.shape), q), axis=1)
    median_pick = order[:, (sr.m - 1) // 2]
    correct = sr.correct()
    rows = np.arange(sr.n)
    return Bounds(
        worst=float(correct[rows, worst_pick].mean()),
        median=float(correct[rows, median_pick].mean()),
        best=float(correct[rows, best_pick].mean()),
        worst_pick=worst_pick, median_pick=median_pick, best_pick=best_pick)


def unique_predictions(sr: SweepResult) -> np.ndarray:
    """Histogram over the number of distinct classes each sample receives
    across all permutations; hist[k] counts samples with k unique
    predictions, and hist sums to n."""
    counts = np.array([len(np.unique(row)) for row in sr.preds])
    hist = np.bincount(counts, minlength=sr.m + 1)
    return hist


def mean_unique_predictions(sr: SweepResult) -> float:
    hist = unique_predictions(sr)
    ks = np.arange(hist.size)
    return float((hist * ks).sum() / hist.sum())


# ---------------------------------------------------------------------------
# greedy accumulation

@dataclass
class GreedyStep:
    k: int
    accuracy: float
    perm_index: int


def greedy_accumulate(sr: SweepResult, k_max: int | None = None) -> list[GreedyStep]:
    """Iteratively add the permutation that most increases the accumulated
    best-case accuracy (ties: larger summed max-quality, then lowest index)."""
    m = sr.m
    k_max = m if k_max is None else k_max
    if k_max > m:
        raise ValueError(f"k_max {k_max} exceeds {m} permutations")
    correct = sr.correct()
    q = sr.quality()
    covered = np.zeros(sr.n, dtype=bool)
    qmax = np.full(sr.n, -np.inf, dtype=np.float64)
    chosen: list[GreedyStep] = []
    remaining = np.ones(m, dtype=bool)
    for k in range(1, k_max + 1):
        acc = (covered[:, None] | correct).mean(axis=0)
        qsum = np.maximum(qmax[:, None], q).sum(axis=0)
        acc[~remaining] = -1.0
        best_acc = acc.max()
        tie = (acc == best_acc) & remaining
        qsum = np.where(tie, qsum, -np.inf)
        pick = int(qsum.argmax())  # argmax takes the lowest index on ties
        remaining[pick] = False
        covered |= correct[:, pick]
        qmax = np.maximum(qmax, q[:, pick])
        chosen.append(GreedyStep(k, float(covered.mean()), pick))
    return chosen


# ---------------------------------------------------------------------------
# permutation budget (cap on the combined option space)

@dataclass(frozen=True)
class BudgetPlan:
    attributes: int
    cap: int
    per_attribute: int

    @property
    def total(self) -> int:
        return self.per_attribute ** self.attributes


def budget(attributes: int, cap: int = 625) -> BudgetPlan:
    """Largest per-attribute count R with R^attributes <= cap."""
    if attributes < 1 or cap < 1:
        raise ValueError("attributes and cap must be >= 1")
    r = max(1, int(round(cap ** (1.0 / attributes))))
    while (r + 1) ** attributes <= cap:
        r += 1
    while r ** attributes > cap and r > 1:
        r -= 1
    return BudgetPlan(attributes, cap, r)


def combined_space(per_attr: dict, plan: BudgetPlan) -> list[Permutation]:
    """Cartesian product of each attribute's top-R permutations; a combined
    permutation sets all attributes' options in each slot simultaneously."""
    attrs = [a for a in ATTRIBUTES if a in per_attr]
    if len(attrs) != len(per_attr):
        raise ConfigError(f"unknown attributes in {sorted(per_attr)}")
    lists = []
    slots = None
    for a in attrs:
        perms = per_attr[a]
        if len(perms) < plan.per_attribute:
            raise ConfigError(
                f"attribute {a} offers {len(perms)} permutations, plan needs "
                f"{plan.per_attribute}")
        perms = perms[:plan.per_attribute]
        for p in perms:
            if p.attrs != (a,):
                raise ConfigError(f"permutation for {a} carries attrs {p.attrs}")
            if slots is None:
                slots = p.slots
            elif p.slots != slots:
                raise ConfigError("attribute sweeps cover different slots")
        lists.append(perms)
    out = []
    import itertools
    for combo in itertools.product(*lists):
        values = tuple(
            tuple(combo[ai].values[si][0] for ai in range(len(attrs)))
            for si in range(len(slots)))
        out.append(Permutation(slots, tuple(attrs), values, index=len(out)))
    return out


# ---------------------------------------------------------------------------
# preference reports

@dataclass
class PreferenceReport:
    path_fractions: dict            # perm index -> fraction of samples
    marginals: dict                 # (slot, attr) -> {option: fraction}
    group_marginals: dict = field(default_factory=dict)  # group -> marginals


def _marginals_for(perms, picks, weights=None) -> dict:
    n = len(picks)
    w = np.full(n, 1.0 / n) if weights is None else weights
    slots, attrs = perms[0].slots, perms[0].attrs
    out = {}
    for si, slot in enumerate(slots):
        for ai, attr in enumerate(attrs):
            dist: dict = {}
            for pick, wi in zip(picks, w):
                v = perms[pick].values[si][ai]
                dist[v] = dist.get(v, 0.0) + wi
            out[(slot, attr)] = dist
    return out


def preference_report(sr: SweepResult, groups=None) -> PreferenceReport:
    """Per-sample preferred permutation (argmax quality, lowest index on
    ties), aggregated into path fractions and per-layer option marginals;
    optionally also grouped by a per-sample label (e.g. probe level)."""
    q = sr.quality()
    picks = q.argmax(axis=1)
    frac: dict = {}
    for p in picks:
        frac[int(p)] = frac.get(int(p), 0.0) + 1.0 / sr.n
    report = PreferenceReport(
        path_fractions=dict(sorted(frac.items())),
        marginals=_marginals_for(sr.perms, picks))
    if groups is not None:
        groups = np.asarray(groups)
        for g in np.unique(groups):
            sel = picks[groups == g]
            report.group_marginals[g] = _marginals_for(sr.perms, sel)
    return report


def mean_preferred_option(report: PreferenceReport, slot: str, attr: str,
                          group=None) -> float:
    src = report.marginals if group is None else report.group_marginals[group]
    dist = src[(slot, attr)]
    return float(sum(v * f for v, f in dist.items()) / sum(dist.values()))
