"""Cohen's kappa, multi-seed experiment sweeps and built-feature recurrence."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, split_indices
from .ensembles import EnsembleConfig
from .errors import EmptyMatrix, TreeFCError
from .expr import FeatureExpr, contains_pattern, parse_expr
from .pipeline import built_features, predict_any, train
from .tree import TreeConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[actual][predicted]`` for classes 0 (background) and 1 (signal)."""

    counts: tuple[tuple[int, int], tuple[int, int]]

    @classmethod
    def from_labels(cls, actual, predicted) -> "ConfusionMatrix":
        actual = np.asarray(actual)
        predicted = np.asarray(predicted)
        c = [[int(np.sum((actual == a) & (predicted == p))) for p in (0, 1)] for a in (0, 1)]
        return cls((tuple(c[0]), tuple(c[1])))

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    def as_list(self) -> list[list[int]]:
        return [list(r) for r in self.counts]


def cohens_kappa(cm: ConfusionMatrix | Sequence[Sequence[float]]) -> float:
    m = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        raise EmptyMatrix("confusion matrix is empty")
    p_o = np.trace(m) / total
    p_e = float(np.dot(m.sum(axis=1), m.sum(axis=0))) / total**2
    if p_e >= 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class RunRecord:
    dataset: str
    algo: str
    param: float
    seed: int
    kappa: float | None
    runtime_s: float
    n_built: int
    built_features: list[str] = field(default_factory=list)
    error: str | None = None


@dataclass
class ExperimentSpec:
    algos: Sequence[str]
    params: Sequence[float]
    n_runs: int = 10
    base_seed: int = 0
    train_fraction: float = 0.8
    fixed_split: bool = False
    tree: TreeConfig = field(default_factory=TreeConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    # per-algorithm overrides of ``ensemble`` (e.g. distinct weak depths)
    ensembles: dict[str, EnsembleConfig] = field(default_factory=dict)
    dataset_name: str = "data"


@dataclass
class ExperimentResult:
    runs: list[RunRecord]

    def aggregates(self) -> list[dict]:
        """Mean and sample standard deviation of kappa per (dataset, algo, param), in run order."""
        groups: dict[tuple, list[float]] = {}
        for r in self.runs:
            groups.setdefault((r.dataset, r.algo, r.param), [])
            if r.kappa is not None:
                groups[(r.dataset, r.algo, r.param)].append(r.kappa)
        out = []
        for (ds, algo, param), ks in groups.items():
            mean = float(np.mean(ks)) if ks else math.nan
            std = float(np.std(ks, ddof=1)) if len(ks) > 1 else 0.0
            out.append({"dataset": ds, "algo": algo, "x": param, "mean_kappa": mean, "std_kappa": std,
                        "n_runs": len(ks)})
        return out

    def write_table(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "algo", "n_features_param", "seed", "kappa", "runtime_s", "n_built"])
            for r in self.runs:
                w.writerow([r.dataset, r.algo, repr(r.param), r.seed,
                            "" if r.kappa is None else repr(r.kappa), f"{r.runtime_s:.3f}", r.n_built])

    def write_curve(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "algo", "x", "mean_kappa", "std_kappa", "n_runs"])
            for a in self.aggregates():
                w.writerow([a["dataset"], a["algo"], repr(a["x"]), repr(a["mean_kappa"]), repr(a["std_kappa"]),
                            a["n_runs"]])

    def to_json(self, provenance: dict | None = None) -> str:
        body = {"provenance": provenance or {}, "runs": [asdict(r) for r in self.runs]}
        return json.dumps(body, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResult":
        return cls([RunRecord(**r) for r in json.loads(text)["runs"]])


def evaluate_model(model, test_ds: Dataset) -> tuple[float, ConfusionMatrix]:
    labels, _ = predict_any(model, test_ds)
    cm = ConfusionMatrix.from_labels(test_ds.labels, labels)
    return cohens_kappa(cm), cm


def _one_run(job) -> RunRecord:
    dataset, spec, algo, param, seed = job
    start = time.perf_counter()
    try:
        split_seed = spec.base_seed if spec.fixed_split else seed
        tr, te = split_indices(len(dataset), spec.train_fraction, split_seed)
        train_ds, test_ds = dataset.subset(tr), dataset.subset(te)
        model = train(algo, train_ds, param, spec.tree, spec.ensembles.get(algo, spec.ensemble), seed)
        kappa, _ = evaluate_model(model, test_ds)
        feats = [str(e) for e in built_features(model)]
        return RunRecord(spec.dataset_name, algo, param, seed, kappa, time.perf_counter() - start, len(feats), feats)
    except TreeFCError as exc:
        log.warning("run %s/%s/seed %d failed: %s", algo, param, seed, exc)
        return RunRecord(spec.dataset_name, algo, param, seed, None, time.perf_counter() - start, 0, [], str(exc))


def run_experiment(dataset: Dataset, spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    """Train and score every (algo, param, seed) cell on a fresh 80/20 split.

    Seeds are ``base_seed .. base_seed + n_runs - 1``; a failing run is recorded
    with its error instead of aborting the sweep.
    """
    if spec.n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    base = dataset.without_built()
    jobs_list = [(base, spec, algo, float(param), spec.base_seed + k)
                 for algo in spec.algos for param in spec.params for k in range(spec.n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_one_run, jobs_list))
    else:
        runs = [_one_run(j) for j in jobs_list]
    return ExperimentResult(runs)


def recurrence_stats(results: ExperimentResult, patterns: Sequence[FeatureExpr]) -> list[float]:
    """Fraction of successful runs in which some built feature contains each pattern."""
    runs = [r for r in results.runs if r.error is None]
    if not runs:
        raise ValueError("no successful runs")
    parsed = [[parse_expr(t) for t in r.built_features] for r in runs]
    return [sum(any(contains_pattern(e, p) for e in feats) for feats in parsed) / len(runs) for p in patterns]
