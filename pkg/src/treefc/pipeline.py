"""Algorithm names used by the CLI and the experiment runner, mapped onto the
tree and ensemble trainers."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .dataset import Dataset
from .ensembles import EnsembleConfig, EnsembleKind, EnsembleModel, fit_ensemble, predict_ensemble
from .errors import ConfigError
from .expr import FeatureExpr
from .tree import TreeConfig, TreeModel, fit_tree, predict

ALGOS = ("c45", "adaboost", "gboost")


def train(algo: str, train_ds: Dataset, param: float, tree_config: TreeConfig, ensemble_config: EnsembleConfig,
          seed: int, jobs: int = 1) -> TreeModel | EnsembleModel:
    """Fit ``algo`` on all rows of ``train_ds``. ``param`` is N_max for c45 and
    the per-tree construction rate p for the ensembles."""
    rows = np.arange(len(train_ds))
    train_ds.validate(training=True)
    if algo == "c45":
        if param != int(param):
            raise ConfigError(f"c45 needs an integer N_max, got {param}")
        cfg = replace(tree_config, n_max=int(param), seed=seed)
        return fit_tree(train_ds, rows, cfg, rng=np.random.default_rng(seed), jobs=jobs)
    if algo not in ALGOS:
        raise ConfigError(f"unknown algorithm {algo!r}; expected one of {', '.join(ALGOS)}")
    kind = EnsembleKind.ADABOOST if algo == "adaboost" else EnsembleKind.GRADBOOST
    cfg = ensemble_config
    if cfg.kind is not kind:
        # template built for the other ensemble: fall back to that kind's default depth
        cfg = replace(cfg, kind=kind, weak_depth=None)
    cfg = replace(cfg, p_build=float(param), seed=seed)
    return fit_ensemble(train_ds, rows, cfg, jobs=jobs)


def predict_any(model, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(model, TreeModel):
        return predict(model, dataset)
    return predict_ensemble(model, dataset)


def built_features(model) -> list[FeatureExpr]:
    if isinstance(model, TreeModel):
        return list(model.built_features)
    return [e for _, e in model.built_features]
