import math

import numpy as np
import pytest

from reference import PlainTree
from synth import higgs_subset
from treefc.criteria import Criterion, entropy
from treefc.dataset import Dataset, DvcsGenParams, generate_dvcs
from treefc.errors import EmptyTraining, InvalidParams, UnknownColumn
from treefc.expr import eval_columns, gev
from treefc.gp import GpConfig
from treefc.tree import TreeConfig, apply_tree, construction_condition, find_best_split, fit_tree, predict

SMALL_GP = GpConfig(population_size=40, generations=4)


# ---------------------------------------------------------------- construction condition

def test_construction_condition_examples():
    assert construction_condition(0, 1, 1)
    assert not construction_condition(1, 1, 1)
    assert construction_condition(2, 2, 3)
    assert not construction_condition(0, 3, 3)
    assert not any(construction_condition(f, d, 0) for f in range(5) for d in range(1, 7))


def test_construction_condition_grid_and_region():
    for n_max in range(8):
        for d in range(1, 7):
            for n_f in range(9):
                expected = d <= math.log2(1 + n_max) and n_f < n_max
                assert construction_condition(n_f, d, n_max) == expected
        # a full binary tree has 2^(d-1) nodes at depth d
        region = sum(2 ** (d - 1) for d in range(1, 7) if construction_condition(0, d, n_max))
        assert region == 2 ** int(math.floor(math.log2(1 + n_max))) - 1
        assert region <= n_max
    with pytest.raises(ValueError):
        construction_condition(-1, 1, 1)


def test_tree_config_validation():
    with pytest.raises(InvalidParams):
        TreeConfig(n_max=-1)
    with pytest.raises(InvalidParams):
        TreeConfig(max_tree_depth=0)
    with pytest.raises(InvalidParams):
        TreeConfig(depth_base=2)


# ---------------------------------------------------------------- budget

@pytest.fixture(scope="module")
def dvcs():
    return generate_dvcs(DvcsGenParams(n_events=3000, seed=11))


@pytest.mark.parametrize("seed", [0, 1])
def test_budget_and_construction_depths(dvcs, seed):
    ds = dvcs.copy()
    model = fit_tree(ds, np.arange(len(ds)), TreeConfig(n_max=3, gp=SMALL_GP), rng=np.random.default_rng(seed))
    built_nodes = [n for n in model.nodes if n.constructed]
    assert model.n_constructions == len(built_nodes) <= 3
    assert len(model.built_features) <= 3
    assert all(n.depth <= 2 for n in built_nodes)
    assert model.nodes[0].constructed
    # every referenced built feature is stored in the model and in the pool
    pool = {bf.expr for bf in ds.built}
    for n in model.nodes:
        if n.expr is not None and n.constructed:
            assert n.expr in model.built_features and n.expr in pool


def test_zero_based_depth_variant(dvcs):
    ds = dvcs.copy()
    model = fit_tree(ds, np.arange(len(ds)), TreeConfig(n_max=1, depth_base=0, gp=SMALL_GP),
                     rng=np.random.default_rng(0))
    assert model.n_constructions == 1 and model.nodes[0].constructed


# ---------------------------------------------------------------- plain path

def _shape(model):
    return [(n.depth, n.feature, n.threshold, n.n_rows) for n in model.nodes]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_nmax_zero_equals_reference_tree(tmp_path, seed):
    ds, _ = higgs_subset(tmp_path, 1500, seed=seed)
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(ds), 1200, replace=False))
    test = np.setdiff1d(np.arange(len(ds)), rows)
    model = fit_tree(ds, rows, TreeConfig(n_max=0, seed=seed))
    train_cols = {k: v[rows] for k, v in ds.columns.items()}
    ref = PlainTree(train_cols, ds.labels[rows], ds.weights[rows])
    assert _shape(model) == ref.shape()
    assert not model.built_features
    test_ds = ds.subset(test)
    labels, post = predict(model, test_ds)
    assert np.array_equal(post, ref.values(test_ds.columns))
    assert np.array_equal(labels, ref.labels(test_ds.columns))


def test_nmax_zero_regression_equals_reference(tmp_path):
    ds, _ = higgs_subset(tmp_path, 1000, seed=3)
    rng = np.random.default_rng(3)
    targets = rng.normal(0, 1, len(ds)) + (ds.columns["PRI_tau_pt"] > 40)
    weights = rng.uniform(0.5, 2.0, len(ds))
    rows = np.arange(len(ds))
    cfg = TreeConfig(criterion=Criterion.MSE_REDUCTION, n_max=0, max_tree_depth=3)
    model = fit_tree(ds, rows, cfg, targets=targets, weights=weights)
    ref = PlainTree(ds.columns, targets, weights, max_depth=3, regression=True)
    assert _shape(model) == ref.shape()
    _, values = predict(model, ds)
    assert np.array_equal(values, ref.values(ds.columns))


# ---------------------------------------------------------------- structure invariants

def test_splits_partition_and_reduce_impurity(dvcs):
    ds = dvcs.copy()
    rows = np.arange(len(ds))
    model = fit_tree(ds, rows, TreeConfig(n_max=3, max_tree_depth=6, gp=SMALL_GP), rng=np.random.default_rng(4))
    leaf = apply_tree(model, ds)
    # recover each node's rows by walking down
    node_rows = {0: rows}
    for i, node in enumerate(model.nodes):
        r = node_rows[i]
        assert len(r) == node.n_rows
        assert sum(node.value) == pytest.approx(1.0, abs=1e-12)
        if node.is_leaf:
            assert np.all(leaf[r] == i)
            continue
        src = ds.columns[node.feature] if node.expr is None else eval_columns(node.expr, ds.columns)
        go = src[r] <= node.threshold
        assert 0 < go.sum() < len(r)
        node_rows[node.left], node_rows[node.right] = r[go], r[~go]
        parent = entropy(ds.labels[r])
        kids = sum(len(c) / len(r) * entropy(ds.labels[c]) for c in (r[go], r[~go]))
        assert kids <= parent + 1e-12


def test_pure_leaves_fit_training_rows():
    rng = np.random.default_rng(0)
    x = rng.normal(size=400)
    ds = Dataset({"x": x, "y": rng.normal(size=400)}, {"x": gev(1), "y": gev(1)}, (x > 0.3).astype(int))
    model = fit_tree(ds, np.arange(400), TreeConfig(min_samples_split=2, min_leaf=1))
    labels, _ = predict(model, ds)
    assert np.array_equal(labels, ds.labels)


# ---------------------------------------------------------------- split search

def test_find_best_split_pure_node_and_gp_at_root(dvcs):
    ds = dvcs.copy()
    sig = np.flatnonzero(ds.labels == 1)[:100]
    assert find_best_split(ds, sig, 1, 0, TreeConfig(n_max=1, gp=SMALL_GP), np.random.default_rng(0)) is None
    rows = np.arange(len(ds))
    plain = find_best_split(ds, rows, 1, 0, TreeConfig(n_max=0), np.random.default_rng(0))
    assert plain.feature in ds.columns and not plain.constructed


@pytest.mark.parametrize("seed", range(5))
def test_root_construction_beats_raw_columns(seed):
    ds = generate_dvcs(DvcsGenParams(n_events=2000, smear_sigma_rel=0.0, seed=seed))
    rows = np.arange(len(ds))
    cfg = TreeConfig(n_max=1, gp=GpConfig(population_size=60, generations=5))
    built = find_best_split(ds, rows, 1, 0, cfg, np.random.default_rng(seed))
    raw = find_best_split(ds, rows, 1, 0, TreeConfig(n_max=0), np.random.default_rng(seed))
    assert built.constructed
    assert built.split.score >= raw.split.score


def test_scan_reuses_pooled_features(dvcs):
    ds = dvcs.copy()
    rows = np.arange(len(ds))
    fit_tree(ds, rows, TreeConfig(n_max=1, max_tree_depth=1, gp=SMALL_GP), rng=np.random.default_rng(0))
    assert ds.built
    plain = fit_tree(ds, rows, TreeConfig(n_max=0, max_tree_depth=1))
    isolated = fit_tree(ds, rows, TreeConfig(n_max=0, max_tree_depth=1, scan_built=False))
    root, iso = plain.nodes[0], isolated.nodes[0]
    assert iso.expr is None
    if root.expr is not None:
        assert not root.constructed and root.expr == ds.built[0].expr


# ---------------------------------------------------------------- prediction

def test_lazy_equals_materialized(dvcs):
    ds = dvcs.copy()
    model = fit_tree(ds, np.arange(len(ds)), TreeConfig(n_max=3, gp=SMALL_GP), rng=np.random.default_rng(2))
    assert model.built_features
    fresh = generate_dvcs(DvcsGenParams(n_events=1000, seed=99))
    lazy_labels, lazy_post = predict(model, fresh)
    # materialize every split source as a plain column and route by hand
    cols = {}
    for i, node in enumerate(model.nodes):
        if not node.is_leaf:
            cols[i] = fresh.columns[node.feature] if node.expr is None else fresh.evaluate(node.expr)
    out = np.empty(len(fresh))
    for j in range(len(fresh)):
        i = 0
        while not model.nodes[i].is_leaf:
            n = model.nodes[i]
            i = n.left if cols[i][j] <= n.threshold else n.right
        out[j] = model.nodes[i].value[1]
    assert np.array_equal(lazy_post, out)
    assert np.array_equal(lazy_labels, (out > 1 - out).astype(np.int8))


def test_predict_empty_and_unknown_column(dvcs):
    ds = dvcs.copy()
    model = fit_tree(ds, np.arange(len(ds)), TreeConfig(n_max=0, max_tree_depth=2))
    labels, scores = predict(model, ds.subset(np.arange(0)))
    assert labels.shape == (0,) and scores.shape == (0,)
    used = model.nodes[0].feature
    cols = {k: v for k, v in ds.columns.items() if k != used}
    other = Dataset(cols, {k: ds.units[k] for k in cols}, ds.labels)
    with pytest.raises(UnknownColumn):
        predict(model, other)


def test_empty_and_tiny_training(dvcs):
    with pytest.raises(EmptyTraining):
        fit_tree(dvcs, np.arange(0), TreeConfig())
    model = fit_tree(dvcs, np.arange(1), TreeConfig())
    assert len(model.nodes) == 1 and model.nodes[0].is_leaf
