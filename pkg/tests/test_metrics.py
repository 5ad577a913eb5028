import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treefc.dataset import DvcsGenParams, generate_dvcs
from treefc.ensembles import EnsembleConfig
from treefc.errors import EmptyMatrix
from treefc.expr import parse_expr
from treefc.metrics import (
    ConfusionMatrix,
    ExperimentResult,
    ExperimentSpec,
    RunRecord,
    cohens_kappa,
    recurrence_stats,
    run_experiment,
)
from treefc.gp import GpConfig
from treefc.tree import TreeConfig

SMALL_GP = GpConfig(population_size=40, generations=4)


def test_kappa_examples():
    assert cohens_kappa([[50, 0], [0, 50]]) == 1.0
    assert cohens_kappa([[50, 0], [50, 0]]) == 0.0
    assert cohens_kappa([[40, 10], [20, 30]]) == pytest.approx(0.4, abs=1e-15)
    assert cohens_kappa([[0, 0], [0, 7]]) == 0.0  # p_e = 1
    with pytest.raises(EmptyMatrix):
        cohens_kappa([[0, 0], [0, 0]])


def test_confusion_from_labels():
    cm = ConfusionMatrix.from_labels([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
    assert cm.as_list() == [[1, 1], [1, 2]] and cm.total == 5


counts = st.lists(st.integers(0, 200), min_size=4, max_size=4).filter(lambda c: sum(c) > 0)


@settings(max_examples=300, deadline=None)
@given(counts)
def test_kappa_properties(c):
    m = [[c[0], c[1]], [c[2], c[3]]]
    k = cohens_kappa(m)
    assert -1 - 1e-12 <= k <= 1 + 1e-12
    # swap class labels on both axes
    assert cohens_kappa([[c[3], c[2]], [c[1], c[0]]]) == pytest.approx(k, abs=1e-12)
    if c[1] == 0 and c[2] == 0 and c[0] > 0 and c[3] > 0:
        assert k == pytest.approx(1.0)
    if k == pytest.approx(1.0, abs=1e-12):
        assert c[1] == 0 and c[2] == 0
    total = sum(c)
    p_o = (c[0] + c[3]) / total
    p_e = ((c[0] + c[1]) * (c[0] + c[2]) + (c[2] + c[3]) * (c[1] + c[3])) / total**2
    if abs(p_o - p_e) < 1e-15:
        assert abs(k) < 1e-9


@pytest.fixture(scope="module")
def small_sweep():
    ds = generate_dvcs(DvcsGenParams(n_events=600, seed=1))
    spec = ExperimentSpec(algos=["c45"], params=[0, 1], n_runs=2, tree=TreeConfig(max_tree_depth=4, gp=SMALL_GP),
                          dataset_name="dvcs")
    return ds, spec, run_experiment(ds, spec)


def test_sweep_cardinality_and_determinism(small_sweep):
    ds, spec, res = small_sweep
    assert len(res.runs) == 4
    assert [(r.param, r.seed) for r in res.runs] == [(0.0, 0), (0.0, 1), (1.0, 0), (1.0, 1)]
    assert all(r.error is None for r in res.runs)
    assert all(r.n_built == 0 for r in res.runs if r.param == 0)
    again = run_experiment(ds, ExperimentSpec(algos=["c45"], params=[0], n_runs=2,
                                              tree=TreeConfig(max_tree_depth=4, gp=SMALL_GP), dataset_name="dvcs"))
    assert [r.kappa for r in again.runs] == [r.kappa for r in res.runs[:2]]


def test_aggregates_recompute(small_sweep, tmp_path):
    _, _, res = small_sweep
    for agg in res.aggregates():
        ks = [r.kappa for r in res.runs if r.param == agg["x"]]
        assert abs(agg["mean_kappa"] - sum(ks) / len(ks)) <= 1e-12
        m = sum(ks) / len(ks)
        sd = (sum((k - m) ** 2 for k in ks) / (len(ks) - 1)) ** 0.5
        assert abs(agg["std_kappa"] - sd) <= 1e-12
        assert agg["n_runs"] == 2
    res.write_table(tmp_path / "t.csv")
    res.write_curve(tmp_path / "c.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "dataset,algo,n_features_param,seed,kappa,runtime_s,n_built"
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 3
    back = ExperimentResult.from_json(res.to_json({"seed": 0}))
    assert back.runs == res.runs


def test_sweep_records_failures():
    ds = generate_dvcs(DvcsGenParams(n_events=200, seed=2))
    spec = ExperimentSpec(algos=["adaboost"], params=[1.5], n_runs=1, ensemble=EnsembleConfig(n_estimators=2))
    res = run_experiment(ds, spec)
    assert res.runs[0].kappa is None and "integer" in res.runs[0].error


def _runs(*feature_lists):
    return ExperimentResult([RunRecord("d", "c45", 1.0, i, 0.1, 0.0, len(f), list(f))
                             for i, f in enumerate(feature_lists)])


def test_recurrence_cases():
    res = _runs(["pz_e + pz_g1 + pz_p"], ["sq(pz_p + pz_e) + pz_g1"], ["px_e * px_p"], [])
    always = recurrence_stats(_runs(["x + y"], ["y + x"]), [parse_expr("x + y")])
    assert always == [1.0]
    assert recurrence_stats(res, [parse_expr("qq + rr")]) == [0.0]
    full, part, leaf = recurrence_stats(
        res, [parse_expr("pz_e + pz_g1 + pz_p"), parse_expr("pz_e + pz_p"), parse_expr("pz_p")])
    assert full == 0.25
    assert 0 <= full <= part <= leaf <= 1
    with pytest.raises(ValueError):
        recurrence_stats(ExperimentResult([RunRecord("d", "c45", 0, 0, None, 0, 0, [], "boom")]), [])
