import json
from dataclasses import replace

import numpy as np
import pytest

from treefc.dataset import DvcsGenParams, generate_dvcs
from treefc.ensembles import EnsembleConfig, fit_adaboost, fit_gradient_boosting
from treefc.errors import ModelParseError
from treefc.gp import GpConfig
from treefc.pipeline import built_features, predict_any
from treefc.serialize import dumps, load_model, loads, save_model
from treefc.tree import TreeConfig, fit_tree

TREE = TreeConfig(gp=GpConfig(population_size=30, generations=4, generations_down=2))


@pytest.fixture(scope="module")
def data():
    return generate_dvcs(DvcsGenParams(n_events=1500, seed=8)), generate_dvcs(DvcsGenParams(n_events=500, seed=9))


def _models(train):
    rows = np.arange(len(train))
    yield fit_tree(train.copy(), rows, replace(TREE, n_max=3), rng=np.random.default_rng(0))
    yield fit_adaboost(train.copy(), rows, EnsembleConfig(kind="adaboost", n_estimators=6, p_build=1, tree=TREE))
    yield fit_gradient_boosting(train.copy(), rows,
                                EnsembleConfig(kind="gradboost", n_estimators=6, p_build=0.5, tree=TREE, seed=2))


def test_round_trip_bit_exact(data, tmp_path):
    train, test = data
    for i, model in enumerate(_models(train)):
        assert built_features(model)
        path = tmp_path / f"m{i}.json"
        save_model(model, path, train.schema, provenance={"seed": 0})
        back = load_model(path)
        l0, s0 = predict_any(model, test)
        l1, s1 = predict_any(back, test)
        assert np.array_equal(l0, l1)
        assert s0.tobytes() == s1.tobytes()
        assert [str(e) for e in built_features(back)] == [str(e) for e in built_features(model)]
        # saving the reloaded model reproduces the file
        assert dumps(back, train.schema, {"seed": 0}) == path.read_text()
        assert json.loads(path.read_text())["provenance"] == {"seed": 0}


def test_parse_errors(tmp_path):
    with pytest.raises(ModelParseError):
        loads("not json")
    with pytest.raises(ModelParseError):
        loads('{"format": "other"}')
    ds = generate_dvcs(DvcsGenParams(n_events=200, seed=1))
    data = json.loads(dumps(fit_tree(ds, np.arange(200), TreeConfig()), ds.schema))
    del data["tree"]
    with pytest.raises(ModelParseError):
        loads(json.dumps(data))
