"""Level-order decision-tree induction with embedded feature construction.

At every node either the GP engine builds a new splitting feature (while the
construction condition holds) or the usual scan over existing columns and
previously built features picks the split.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .criteria import Criterion, SplitEval, SplitTask
from .dataset import Dataset
from .errors import Degenerate, EmptyTraining, InvalidParams, UnknownColumn
from .expr import FeatureExpr, Terminal, eval_columns
from .gp import EvolveTrace, GpConfig, evolve
from .grammar import Grammar

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeConfig:
    criterion: Criterion = Criterion.INFO_GAIN
    n_max: int = 0
    max_tree_depth: int = 20
    min_samples_split: int = 20
    min_leaf: int = 5
    gp: GpConfig = field(default_factory=GpConfig)
    grammar: Grammar = field(default_factory=Grammar)
    # let the classical scan consider features built earlier (this tree or others)
    scan_built: bool = True
    # 1: the root has depth 1 in the construction condition; 0: the root has depth 0
    depth_base: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        if self.n_max < 0:
            raise InvalidParams("n_max must be >= 0")
        if self.max_tree_depth < 1:
            raise InvalidParams("max_tree_depth must be >= 1")
        if self.min_leaf < 1 or self.min_samples_split < 2:
            raise InvalidParams("min_leaf must be >= 1 and min_samples_split >= 2")
        if self.depth_base not in (0, 1):
            raise InvalidParams("depth_base must be 0 or 1")


def construction_condition(n_f: int, depth: int, n_max: int) -> bool:
    """``depth <= log2(1 + n_max) and n_f < n_max``, evaluated in integers."""
    if depth < 0 or n_f < 0 or n_max < 0:
        raise ValueError("arguments must be nonnegative")
    return n_f < n_max and (1 << depth) <= 1 + n_max


@dataclass
class TreeNode:
    depth: int
    value: list[float]  # class posterior [p0, p1], or [regression value]
    n_rows: int
    feature: str | None = None  # raw column name
    expr: FeatureExpr | None = None  # constructed feature
    threshold: float | None = None
    left: int | None = None
    right: int | None = None
    constructed: bool = False  # split feature built at this node

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def source_label(self) -> str:
        return self.feature if self.expr is None else str(self.expr)


@dataclass
class TreeModel:
    nodes: list[TreeNode]
    built_features: list[FeatureExpr]
    config: TreeConfig
    regression: bool = False
    n_constructions: int = 0

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def split_exprs(self) -> list[FeatureExpr]:
        return [n.expr for n in self.nodes if n.expr is not None]


@dataclass
class SplitDecision:
    split: SplitEval
    feature: str | None
    expr: FeatureExpr | None
    values: np.ndarray  # split feature over the node's rows
    constructed: bool = False


def _scan(dataset: Dataset, rows, task: SplitTask, scan_built: bool) -> SplitDecision | None:
    """Best split over raw columns then pooled built features; strict improvement
    required to displace an earlier candidate, so ties keep raw-before-built order."""
    best = None
    candidates = [(name, None) for name in dataset.columns]
    if scan_built:
        candidates += [(bf.id, bf.expr) for bf in dataset.built]
    for key, expr in candidates:
        values = dataset.values(key)[rows]
        split = task.best_split(values)
        if split is not None and (best is None or split.score > best.split.score):
            best = SplitDecision(split, None if expr is not None else key, expr, values)
    return best


def find_best_split(dataset: Dataset, rows: np.ndarray, depth: int, n_f: int, config: TreeConfig,
                    rng: np.random.Generator, targets=None, weights=None, jobs: int = 1,
                    trace: list | None = None) -> SplitDecision | None:
    """Split decision for one node, or None if the node should become a leaf."""
    targets = dataset.labels[rows] if targets is None else targets
    weights = dataset.weights[rows] if weights is None else weights
    eps = config.grammar.epsilon
    cols = {k: v[rows] for k, v in dataset.columns.items()}
    task = SplitTask(cols, targets, weights, config.criterion, config.min_leaf, eps)
    cond_depth = depth - 1 + config.depth_base
    if construction_condition(n_f, cond_depth, config.n_max):
        gp_trace = EvolveTrace()
        try:
            expr = evolve(config.grammar, dataset.schema, task, config.gp, rng, jobs=jobs, trace=gp_trace)
        except Degenerate:
            log.debug("GP found no useful feature at depth %d; scanning instead", depth)
        else:
            if trace is not None:
                trace.append(gp_trace)
            values = eval_columns(expr, cols, eps)
            split = task.best_split(values)
            if split is not None:
                if isinstance(expr, Terminal):
                    return SplitDecision(split, expr.name, None, values, constructed=True)
                return SplitDecision(split, None, expr, values, constructed=True)
    return _scan(dataset, rows, task, config.scan_built)


def _leaf_value(labels, weights, regression):
    if regression:
        total = weights.sum()
        return [float(np.dot(weights, labels) / total) if total > 0 else float(np.mean(labels))]
    w = weights if weights.sum() > 0 else np.ones(len(labels))
    p1 = float(w[labels == 1].sum() / w.sum())
    return [1.0 - p1, p1]


def fit_tree(dataset: Dataset, rows, config: TreeConfig, *, targets=None, weights=None,
             rng: np.random.Generator | None = None, jobs: int = 1) -> TreeModel:
    """Grow a tree breadth-first so that feature constructions are spent from the
    root downwards, level by level.

    ``targets`` switches to regression (aligned with ``rows``); ``weights``
    overrides the dataset's row weights. Constructed features are appended to
    ``dataset``'s built pool.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise EmptyTraining("no training rows")
    regression = targets is not None
    all_targets = np.zeros(len(dataset))
    if regression:
        all_targets[rows] = np.asarray(targets, dtype=np.float64)
    else:
        all_targets = dataset.labels
    all_weights = dataset.weights.astype(np.float64).copy()
    if weights is not None:
        all_weights[rows] = np.asarray(weights, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(config.seed)

    nodes = [TreeNode(1, _leaf_value(all_targets[rows], all_weights[rows], regression), len(rows))]
    queue = deque([(0, rows)])
    n_f = 0
    built: list[FeatureExpr] = []
    while queue:
        idx, node_rows = queue.popleft()
        node = nodes[idx]
        if node.depth > config.max_tree_depth or len(node_rows) < config.min_samples_split:
            continue
        decision = find_best_split(dataset, node_rows, node.depth, n_f, config, rng,
                                   all_targets[node_rows], all_weights[node_rows], jobs)
        if decision is None:
            continue
        if decision.constructed:
            n_f += 1
            if decision.expr is not None:
                dataset.append_built_feature(decision.expr, config.grammar.epsilon)
                built.append(decision.expr)
        node.feature, node.expr = decision.feature, decision.expr
        node.threshold = decision.split.threshold
        node.constructed = decision.constructed
        go_left = decision.values <= node.threshold
        for child_rows in (node_rows[go_left], node_rows[~go_left]):
            nodes.append(TreeNode(node.depth + 1,
                                  _leaf_value(all_targets[child_rows], all_weights[child_rows], regression),
                                  len(child_rows)))
            queue.append((len(nodes) - 1, child_rows))
        node.left, node.right = len(nodes) - 2, len(nodes) - 1
    return TreeModel(nodes, built, config, regression, n_f)


def feature_values(model_nodes, columns: Mapping[str, np.ndarray], epsilon: float, n: int) -> dict:
    """Per-node split feature values, each distinct source evaluated once."""
    cache: dict = {}
    out = {}
    for i, node in enumerate(model_nodes):
        if node.is_leaf:
            continue
        key = node.feature if node.expr is None else node.expr
        if key not in cache:
            if node.expr is None:
                if node.feature not in columns:
                    raise UnknownColumn(node.feature)
                cache[key] = np.asarray(columns[node.feature], dtype=np.float64)
            else:
                cache[key] = eval_columns(node.expr, columns, epsilon)
        out[i] = cache[key]
    return out


def apply_tree(model: TreeModel, dataset: Dataset, cache: dict | None = None) -> np.ndarray:
    """Index of the leaf reached by every row."""
    n = len(dataset)
    vals = feature_values(model.nodes, dataset.columns, model.config.grammar.epsilon, n) if cache is None else cache
    leaf = np.zeros(n, dtype=np.int64)
    stack = [(0, np.arange(n))]
    while stack:
        i, idx = stack.pop()
        node = model.nodes[i]
        if node.is_leaf or idx.size == 0:
            leaf[idx] = i
            continue
        go_left = vals[i][idx] <= node.threshold
        stack.append((node.left, idx[go_left]))
        stack.append((node.right, idx[~go_left]))
    return leaf


def predict_values(model: TreeModel, dataset: Dataset) -> np.ndarray:
    """Leaf payload per row: shape (n, 2) posteriors or (n,) regression values."""
    leaf = apply_tree(model, dataset)
    table = np.array([node.value for node in model.nodes], dtype=np.float64)
    out = table[leaf]
    return out[:, 0] if model.regression else out


def predict(model: TreeModel, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Labels (argmax posterior, ties to background) and signal posteriors."""
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int8), np.zeros(0)
    post = predict_values(model, dataset)
    if model.regression:
        return (post > 0).astype(np.int8), post
    return (post[:, 1] > post[:, 0]).astype(np.int8), post[:, 1]
