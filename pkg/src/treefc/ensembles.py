"""AdaBoost over stumps and binomial-deviance gradient boosting over depth-3
regression trees, each weak learner optionally building its own features."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .criteria import Criterion
from .dataset import Dataset
from .errors import DegenerateTargets, DegenerateWeights, InvalidParams, NonIntegerAboveOne
from .expr import FeatureExpr
from .tree import TreeConfig, TreeModel, apply_tree, fit_tree, predict

log = logging.getLogger(__name__)

ALPHA_CAP = math.log(1e10)


class EnsembleKind(str, Enum):
    ADABOOST = "adaboost"
    GRADBOOST = "gradboost"


DEFAULT_WEAK_DEPTH = {EnsembleKind.ADABOOST: 1, EnsembleKind.GRADBOOST: 3}


@dataclass(frozen=True)
class EnsembleConfig:
    kind: EnsembleKind = EnsembleKind.ADABOOST
    n_estimators: int = 100
    learning_rate: float = 0.1
    weak_depth: int | None = None
    p_build: float = 0.0
    tree: TreeConfig = field(default_factory=TreeConfig)
    # later trees may split on features built by earlier ones
    share_built: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        if self.weak_depth is None:
            object.__setattr__(self, "weak_depth", DEFAULT_WEAK_DEPTH[self.kind])
        if self.n_estimators < 1:
            raise InvalidParams("n_estimators must be >= 1")
        if self.p_build < 0:
            raise InvalidParams("p_build must be >= 0")
        if self.learning_rate <= 0:
            raise InvalidParams("learning_rate must be > 0")
        check_p_build(self.p_build)


@dataclass
class EnsembleModel:
    kind: EnsembleKind
    trees: list[TreeModel]
    stage_weights: list[float]  # AdaBoost alphas; all 1.0 for gradient boosting
    config: EnsembleConfig
    f0: float = 0.0
    learning_rate: float = 1.0
    stopped_early: bool = False
    history: dict = field(default_factory=dict)

    @property
    def built_features(self) -> list[tuple[int, FeatureExpr]]:
        """(originating tree index, expression) for every constructed feature."""
        return [(i, e) for i, t in enumerate(self.trees) for e in t.built_features]


def check_p_build(p: float) -> None:
    if p >= 1 and p != int(p):
        raise NonIntegerAboveOne(f"p_build={p}: values of 1 or more must be integers")


def sample_fc_budget(p_build: float, rng: np.random.Generator) -> int:
    """Per-tree construction budget: Bernoulli(p) below 1, the integer p above."""
    if p_build < 0:
        raise InvalidParams("p_build must be >= 0")
    check_p_build(p_build)
    if p_build >= 1:
        return int(p_build)
    return int(rng.random() < p_build)


def _weak_config(config: EnsembleConfig, criterion: Criterion, n_max: int) -> TreeConfig:
    return replace(config.tree, criterion=criterion, n_max=n_max, max_tree_depth=config.weak_depth,
                   gp=config.tree.gp.down())


def _tree_data(dataset: Dataset, config: EnsembleConfig) -> Dataset:
    return dataset if config.share_built else dataset.without_built()


def fit_adaboost(dataset: Dataset, rows, config: EnsembleConfig, jobs: int = 1) -> EnsembleModel:
    """Two-class SAMME with information-gain stumps trained on reweighted rows."""
    rows = np.asarray(rows, dtype=np.int64)
    y = dataset.labels[rows]
    if len(np.unique(y)) < 2:
        raise DegenerateWeights("AdaBoost needs both classes in the training rows")
    w = dataset.weights[rows].astype(np.float64)
    if w.sum() <= 0:
        raise DegenerateWeights("training weights sum to zero")
    w = w / w.sum()
    rng = np.random.default_rng(config.seed)
    model = EnsembleModel(EnsembleKind.ADABOOST, [], [], config,
                          history={"train_error": [], "weight_sum": [], "budgets": []})
    margin = np.zeros(len(rows))
    for t in range(config.n_estimators):
        n_max = sample_fc_budget(config.p_build, rng)
        tree_rng = np.random.default_rng(rng.integers(2**63))
        tree = fit_tree(_tree_data(dataset, config), rows, _weak_config(config, Criterion.INFO_GAIN, n_max),
                        weights=w, rng=tree_rng, jobs=jobs)
        pred = predict(tree, dataset)[0][rows]
        miss = pred != y
        err = float(w[miss].sum() / w.sum())
        if err >= 0.5:
            if not model.trees:
                raise DegenerateWeights(f"first weak learner has weighted error {err:.3f} >= 0.5")
            model.stopped_early = True
            break
        model.history["budgets"].append(n_max)
        alpha = ALPHA_CAP if err == 0 else math.log((1 - err) / err)
        model.trees.append(tree)
        model.stage_weights.append(alpha)
        margin += alpha * np.where(pred == 1, 1.0, -1.0)
        model.history["train_error"].append(float(np.mean((margin > 0).astype(np.int8) != y)))
        if err == 0:
            model.stopped_early = t + 1 < config.n_estimators
            model.history["weight_sum"].append(float(w.sum()))
            break
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
        model.history["weight_sum"].append(float(w.sum()))
    return model


def binomial_deviance(y_pm, f, weights=None) -> float:
    """Sum of w * log(1 + exp(-2 y F)) for labels in {-1, +1}."""
    loss = np.logaddexp(0.0, -2.0 * y_pm * f)
    return float(loss.sum() if weights is None else np.dot(weights, loss))


def fit_gradient_boosting(dataset: Dataset, rows, config: EnsembleConfig, jobs: int = 1) -> EnsembleModel:
    """Friedman's two-class gradient boosting on binomial deviance with
    MSE-criterion regression trees and one Newton step per leaf."""
    rows = np.asarray(rows, dtype=np.int64)
    y = np.where(dataset.labels[rows] == 1, 1.0, -1.0)
    w = dataset.weights[rows].astype(np.float64)
    pos, neg = w[y > 0].sum(), w[y < 0].sum()
    if pos <= 0 or neg <= 0:
        raise DegenerateTargets("gradient boosting needs weighted examples of both classes")
    f0 = 0.5 * math.log(pos / neg)
    f = np.full(len(rows), f0)
    rng = np.random.default_rng(config.seed)
    model = EnsembleModel(EnsembleKind.GRADBOOST, [], [], config, f0=f0, learning_rate=config.learning_rate,
                          history={"deviance": [binomial_deviance(y, f, w)], "budgets": []})
    for _ in range(config.n_estimators):
        n_max = sample_fc_budget(config.p_build, rng)
        tree_rng = np.random.default_rng(rng.integers(2**63))
        resid = 2.0 * y / (1.0 + np.exp(np.clip(2.0 * y * f, -700, 700)))
        tree = fit_tree(_tree_data(dataset, config), rows, _weak_config(config, Criterion.MSE_REDUCTION, n_max),
                        targets=resid, weights=w, rng=tree_rng, jobs=jobs)
        leaf = apply_tree(tree, dataset)[rows]
        for i, node in enumerate(tree.nodes):
            if not node.is_leaf:
                continue
            at = leaf == i
            num = float(np.dot(w[at], resid[at]))
            a = np.abs(resid[at])
            den = float(np.dot(w[at], a * (2.0 - a)))
            node.value = [num / den if den > 0 else 0.0]
        values = np.array([n.value[0] for n in tree.nodes])
        f = f + config.learning_rate * values[leaf]
        model.trees.append(tree)
        model.stage_weights.append(1.0)
        model.history["budgets"].append(n_max)
        model.history["deviance"].append(binomial_deviance(y, f, w))
    return model


def fit_ensemble(dataset: Dataset, rows, config: EnsembleConfig, jobs: int = 1) -> EnsembleModel:
    if config.kind is EnsembleKind.ADABOOST:
        return fit_adaboost(dataset, rows, config, jobs)
    return fit_gradient_boosting(dataset, rows, config, jobs)


def decision_function(model: EnsembleModel, dataset: Dataset) -> np.ndarray:
    n = len(dataset)
    if model.kind is EnsembleKind.ADABOOST:
        margin = np.zeros(n)
        for tree, alpha in zip(model.trees, model.stage_weights):
            labels = predict(tree, dataset)[0]
            margin += alpha * np.where(labels == 1, 1.0, -1.0)
        return margin
    total = np.zeros(n)
    for tree in model.trees:
        values = np.array([node.value[0] for node in tree.nodes])
        total += values[apply_tree(tree, dataset)]
    return model.f0 + model.learning_rate * total


def predict_ensemble(model: EnsembleModel, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Labels (positive margin is signal, ties go to background) and margins."""
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int8), np.zeros(0)
    margin = decision_function(model, dataset)
    return (margin > 0).astype(np.int8), margin
