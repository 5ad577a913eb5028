"""JSON text format for trees and ensembles.

Built features are stored in expression syntax and re-parsed on load; floats
are written with ``repr`` precision so reloaded models predict bit-identically.
"""

from __future__ import annotations

import dataclasses
import json
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .criteria import Criterion
from .errors import ExprError, ModelParseError
from .ensembles import EnsembleConfig, EnsembleKind, EnsembleModel
from .expr import UnitClass, infer_unit, parse_expr
from .gp import GpConfig
from .grammar import Grammar
from .tree import TreeConfig, TreeModel, TreeNode

FORMAT = "treefc-model"
VERSION = 1

_NESTED = {
    (TreeConfig, "gp"): GpConfig,
    (TreeConfig, "grammar"): Grammar,
    (EnsembleConfig, "tree"): TreeConfig,
}
_ENUMS = {
    (TreeConfig, "criterion"): Criterion,
    (EnsembleConfig, "kind"): EnsembleKind,
}


def config_to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            value = config_to_dict(value)
        elif isinstance(value, Enum):
            value = value.value
        elif isinstance(value, tuple):
            value = [list(row) if isinstance(row, tuple) else row for row in value]
        out[f.name] = value
    return out


def config_from_dict(cls, data: Mapping[str, Any]):
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key, value in data.items():
        if key not in names:
            raise ModelParseError(f"unknown {cls.__name__} field {key!r}")
        if (cls, key) in _NESTED:
            value = config_from_dict(_NESTED[(cls, key)], value)
        elif (cls, key) in _ENUMS:
            value = _ENUMS[(cls, key)](value)
        elif isinstance(value, list):
            value = tuple(tuple(row) if isinstance(row, list) else row for row in value)
        kwargs[key] = value
    return cls(**kwargs)


def _tree_to_dict(tree: TreeModel, schema) -> dict:
    nodes = []
    for node in tree.nodes:
        item = {"depth": node.depth, "n": node.n_rows, "value": list(node.value)}
        if not node.is_leaf:
            item["split"] = {"feature": node.feature} if node.expr is None else {"expr": str(node.expr)}
            item.update(threshold=node.threshold, left=node.left, right=node.right, constructed=node.constructed)
        nodes.append(item)
    return {
        "regression": tree.regression,
        "n_constructions": tree.n_constructions,
        "built_features": [{"expr": str(e), "unit": infer_unit(e, schema).token()} for e in tree.built_features],
        "config": config_to_dict(tree.config),
        "nodes": nodes,
    }


def _tree_from_dict(data, schema) -> TreeModel:
    def expr(text):
        try:
            return parse_expr(text, schema)
        except ExprError as exc:
            raise ModelParseError(f"bad built feature {text!r}: {exc}") from exc

    nodes = []
    for item in data["nodes"]:
        node = TreeNode(item["depth"], [float(v) for v in item["value"]], item["n"])
        if "split" in item:
            split = item["split"]
            node.feature = split.get("feature")
            node.expr = expr(split["expr"]) if "expr" in split else None
            node.threshold = float(item["threshold"])
            node.left, node.right = item["left"], item["right"]
            node.constructed = item.get("constructed", False)
        nodes.append(node)
    return TreeModel(
        nodes,
        [expr(b["expr"]) for b in data["built_features"]],
        config_from_dict(TreeConfig, data["config"]),
        data["regression"],
        data.get("n_constructions", 0),
    )


def model_to_dict(model: TreeModel | EnsembleModel, schema: Mapping[str, UnitClass],
                  provenance: Mapping[str, Any] | None = None) -> dict:
    out: dict[str, Any] = {"format": FORMAT, "version": VERSION}
    if provenance is not None:
        out["provenance"] = dict(provenance)
    out["schema"] = {k: u.token() for k, u in schema.items()}
    if isinstance(model, TreeModel):
        out["kind"] = "tree"
        out["tree"] = _tree_to_dict(model, schema)
    else:
        out["kind"] = model.kind.value
        out["ensemble"] = {
            "config": config_to_dict(model.config),
            "f0": model.f0,
            "learning_rate": model.learning_rate,
            "stage_weights": list(model.stage_weights),
            "stopped_early": model.stopped_early,
            "history": model.history,
            "trees": [_tree_to_dict(t, schema) for t in model.trees],
        }
    return out


def model_from_dict(data: Mapping[str, Any]) -> TreeModel | EnsembleModel:
    if data.get("format") != FORMAT:
        raise ModelParseError("not a treefc model file")
    try:
        schema = {k: UnitClass.parse(v) for k, v in data["schema"].items()}
        if data["kind"] == "tree":
            return _tree_from_dict(data["tree"], schema)
        ens = data["ensemble"]
        return EnsembleModel(
            EnsembleKind(data["kind"]),
            [_tree_from_dict(t, schema) for t in ens["trees"]],
            [float(a) for a in ens["stage_weights"]],
            config_from_dict(EnsembleConfig, ens["config"]),
            f0=float(ens["f0"]),
            learning_rate=float(ens["learning_rate"]),
            stopped_early=ens["stopped_early"],
            history=ens.get("history", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"malformed model file: {exc!r}") from exc


def model_schema(data: Mapping[str, Any]) -> dict[str, UnitClass]:
    return {k: UnitClass.parse(v) for k, v in data["schema"].items()}


def dumps(model, schema, provenance=None) -> str:
    return json.dumps(model_to_dict(model, schema, provenance), indent=1) + "\n"


def loads(text: str):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(data)


def save_model(model, path: str | Path, schema, provenance=None) -> None:
    Path(path).write_text(dumps(model, schema, provenance))


def load_model(path: str | Path):
    return loads(Path(path).read_text())
