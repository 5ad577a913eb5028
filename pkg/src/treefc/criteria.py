"""Split criteria and exhaustive threshold search.

Both searches sort the candidate feature once and sweep running weighted
tallies, scoring every midpoint between consecutive distinct values in one
vectorized pass. The same functions score tree nodes and GP individuals.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import LengthMismatch, ZeroTotalWeight
from .expr import DIV_EPSILON, FeatureExpr, eval_columns

# gains within this relative distance of the best are ties (lowest threshold wins)
TIE_RTOL = 1e-9
# scores at or below this (times the parent impurity scale) count as zero
ZERO_SCORE = 1e-12


class Criterion(str, Enum):
    INFO_GAIN = "info_gain"
    MSE_REDUCTION = "mse_reduction"


@dataclass(frozen=True)
class SplitEval:
    threshold: float
    score: float
    n_left: int
    n_right: int
    w_left: float
    w_right: float


def _binary_entropy(q):
    q = np.clip(q, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(q * np.log2(q) + (1 - q) * np.log2(1 - q))
    return np.nan_to_num(h, nan=0.0)


def entropy(labels, weights=None) -> float:
    labels = np.asarray(labels)
    weights = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ZeroTotalWeight("total weight must be > 0")
    return float(_binary_entropy(weights[labels == 1].sum() / total))


def midpoint(a, b):
    t = 0.5 * a + 0.5 * b
    return np.where(t < b, t, a)


def _prepare(values, other, weights, min_leaf):
    values = np.asarray(values, dtype=np.float64)
    other = np.asarray(other)
    n = len(values)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(other) != n or len(weights) != n:
        raise LengthMismatch(f"lengths differ: {n}, {len(other)}, {len(weights)}")
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    order = np.argsort(values, kind="stable")
    v = values[order]
    # split after position i puts rows 0..i on the left
    cand = np.arange(min_leaf - 1, n - min_leaf)
    cand = cand[v[cand] < v[cand + 1]]
    return v, other[order], weights[order], cand


def _pick(v, cand, scores, threshold_scale, wl, w_total, n):
    if cand.size == 0:
        return None
    best = scores.max()
    if not best > ZERO_SCORE * threshold_scale:
        return None
    j = int(np.flatnonzero(scores >= best - TIE_RTOL * abs(best))[0])
    i = int(cand[j])
    return SplitEval(
        threshold=float(midpoint(v[i], v[i + 1])),
        score=float(scores[j]),
        n_left=i + 1,
        n_right=n - i - 1,
        w_left=float(wl[j]),
        w_right=float(w_total - wl[j]),
    )


def best_threshold_info_gain(values, labels, weights=None, min_leaf: int = 5, gain_ratio: bool = False) -> SplitEval | None:
    """Threshold maximizing information gain (bits); None without a valid positive-gain split."""
    v, y, w, cand = _prepare(values, labels, weights, min_leaf)
    n = len(v)
    if cand.size == 0:
        return None
    cum_w = np.cumsum(w)
    cum_pos = np.cumsum(w * (y == 1))
    total, pos = cum_w[-1], cum_pos[-1]
    if total <= 0:
        return None
    wl = cum_w[cand]
    pl = cum_pos[cand]
    wr = total - wl
    pr = pos - pl
    with np.errstate(divide="ignore", invalid="ignore"):
        hl = _binary_entropy(np.where(wl > 0, pl / np.where(wl > 0, wl, 1.0), 0.0))
        hr = _binary_entropy(np.where(wr > 0, pr / np.where(wr > 0, wr, 1.0), 0.0))
    parent = _binary_entropy(pos / total)
    gains = parent - (wl / total) * hl - (wr / total) * hr
    if gain_ratio:
        split_info = _binary_entropy(wl / total)
        gains = np.where(split_info > 0, gains / np.where(split_info > 0, split_info, 1.0), 0.0)
    return _pick(v, cand, gains, 1.0, wl, total, n)


def best_threshold_mse(values, targets, weights=None, min_leaf: int = 5) -> SplitEval | None:
    """Threshold maximizing weighted variance reduction; None without a valid positive reduction."""
    v, t, w, cand = _prepare(values, targets, weights, min_leaf)
    n = len(v)
    if cand.size == 0:
        return None
    t = t.astype(np.float64)
    cum_w = np.cumsum(w)
    cum_s = np.cumsum(w * t)
    total, s_total = cum_w[-1], cum_s[-1]
    if total <= 0:
        return None
    mean = s_total / total
    parent = float(np.dot(w, (t - mean) ** 2) / total)
    if parent <= 0:
        return None
    wl = cum_w[cand]
    sl = cum_s[cand]
    wr = total - wl
    sr = s_total - sl
    with np.errstate(divide="ignore", invalid="ignore"):
        # between-group variance == parent MSE - weighted child MSEs
        left = np.where(wl > 0, (sl / np.where(wl > 0, wl, 1.0) - mean) ** 2 * wl, 0.0)
        right = np.where(wr > 0, (sr / np.where(wr > 0, wr, 1.0) - mean) ** 2 * wr, 0.0)
    reductions = (left + right) / total
    return _pick(v, cand, reductions, parent, wl, total, n)


class SplitTask:
    """The data one node hands to the split search: its rows' raw columns,
    labels or regression targets, weights and the criterion."""

    def __init__(self, columns, targets, weights, criterion: Criterion, min_leaf: int = 5, epsilon: float | None = None):
        self.columns = columns
        self.targets = np.asarray(targets)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.criterion = Criterion(criterion)
        self.min_leaf = min_leaf
        self.epsilon = epsilon

    @classmethod
    def from_dataset(cls, dataset, rows, criterion, min_leaf=5, targets=None, weights=None, epsilon=None):
        rows = np.asarray(rows)
        cols = {k: v[rows] for k, v in dataset.columns.items()}
        if targets is None:
            targets = dataset.labels[rows]
        if weights is None:
            weights = dataset.weights[rows]
        return cls(cols, targets, weights, criterion, min_leaf, epsilon)

    def best_split(self, values) -> SplitEval | None:
        if self.criterion is Criterion.INFO_GAIN:
            return best_threshold_info_gain(values, self.targets, self.weights, self.min_leaf)
        return best_threshold_mse(values, self.targets, self.weights, self.min_leaf)

    def evaluate(self, expr: FeatureExpr) -> np.ndarray:
        return eval_columns(expr, self.columns, DIV_EPSILON if self.epsilon is None else self.epsilon)

    def fitness(self, expr: FeatureExpr) -> float:
        split = self.best_split(self.evaluate(expr))
        return 0.0 if split is None else split.score


def fitness_of_expr(expr: FeatureExpr, dataset, rows, criterion: Criterion, min_leaf: int = 5,
                    targets=None, weights=None) -> float:
    """Best split score of ``expr`` on the node's rows, or 0 when no valid split exists."""
    return SplitTask.from_dataset(dataset, rows, criterion, min_leaf, targets, weights).fitness(expr)
