"""``treefc`` command line: fit, predict, sweep, dvcs-gen, inspect, recurrence.

Settings resolve as defaults <- ``--config`` file <- ``--set key=value`` <-
dedicated flags. Every written artifact carries the resolved settings so a
rerun with the embedded configuration reproduces it byte for byte. Timings go
to stdout only, never into artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import Dataset, generate_dvcs, split_indices
from .ensembles import EnsembleModel
from .errors import ConfigError, DataError, TreeFCError
from .expr import infer_unit, parse_expr
from .metrics import (ConfusionMatrix, ExperimentResult, ExperimentSpec, cohens_kappa, recurrence_stats,
                      run_experiment)
from .pipeline import ALGOS, predict_any, train
from .serialize import load_model, model_schema, save_model
from .tree import TreeModel

log = logging.getLogger("treefc")

# flag dest -> setting key
_FLAG_KEYS = {
    "dataset": "dataset.kind",
    "data": "dataset.path",
    "units": "dataset.units",
    "n": "dvcs.n_events",
    "smear": "dvcs.smear_sigma_rel",
    "signal_fraction": "dvcs.signal_fraction",
    "beam": "dvcs.beam_energy_gev",
    "algo": "algo",
    "nmax": "nmax",
    "p_build": "p_build",
    "seed": "seed",
    "algos": "sweep.algos",
    "params": "sweep.params",
    "runs": "sweep.n_runs",
}


def _resolve(args) -> RunConfig:
    overrides = {key: getattr(args, dest) for dest, key in _FLAG_KEYS.items() if hasattr(args, dest)}
    if getattr(args, "command", None) == "dvcs-gen":
        # the generator has its own seed
        overrides["dvcs.seed"] = overrides.pop("seed")
    cfg = RunConfig.resolve(getattr(args, "config", None), overrides, getattr(args, "set", None) or ())
    if cfg["algo"] not in ALGOS:
        raise ConfigError(f"unknown algorithm {cfg['algo']!r}; expected one of {', '.join(ALGOS)}")
    return cfg


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def _feature_rows(model, schema) -> list[dict]:
    if isinstance(model, TreeModel):
        pairs = [(0, e) for e in model.built_features]
    else:
        pairs = model.built_features
    return [{"tree": i, "expr": str(e), "unit": infer_unit(e, schema).token()} for i, e in pairs]


def cmd_fit(args) -> int:
    cfg = _resolve(args)
    start = time.perf_counter()
    data = cfg.load_dataset()
    tr, te = split_indices(len(data), cfg["train_fraction"], cfg["seed"])
    train_ds, test_ds = data.subset(tr), data.subset(te)
    algo = cfg["algo"]
    model = train(algo, train_ds, cfg.param, cfg.tree_config(), cfg.ensemble_config(algo), cfg["seed"],
                  jobs=args.jobs)
    labels, _ = predict_any(model, test_ds)
    cm = ConfusionMatrix.from_labels(test_ds.labels, labels)
    kappa = cohens_kappa(cm)
    elapsed = time.perf_counter() - start

    provenance = cfg.provenance()
    save_model(model, args.out, data.schema, provenance)
    features = _feature_rows(model, data.schema)
    report = {
        "provenance": provenance,
        "algo": algo,
        "n_train": len(train_ds),
        "n_test": len(test_ds),
        "kappa": kappa,
        "confusion": cm.as_list(),
        "built_features": features,
    }
    if args.report:
        _write_json(args.report, report)
    print(f"algo={algo} param={cfg.param:g} seed={cfg['seed']} kappa={kappa:.4f}")
    print(f"confusion [actual][predicted]: {cm.as_list()}")
    for f in features:
        print(f"  built[{f['tree']}]: {f['expr']}  [{f['unit']}]")
    print(f"wall-clock {elapsed:.2f}s")
    return 0


def _check_schema(data: Dataset, schema) -> None:
    for name, unit in schema.items():
        if name not in data.units:
            raise DataError(f"model column {name!r} missing from the input data")
        if data.units[name] != unit:
            raise DataError(f"column {name!r} has unit {data.units[name].token()}, model expects {unit.token()}")


def cmd_predict(args) -> int:
    cfg = _resolve(args)
    model = load_model(args.model)
    data = cfg.load_dataset()
    _check_schema(data, model_schema(json.loads(Path(args.model).read_text())))
    labels, scores = predict_any(model, data)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "score"])
        w.writerows((int(lab), repr(float(s))) for lab, s in zip(labels, scores))
    _write_json(f"{args.out}.config.json", {"provenance": cfg.provenance(), "model": str(args.model)})
    cm = ConfusionMatrix.from_labels(data.labels, labels)
    print(f"rows={len(data)} kappa={cohens_kappa(cm):.4f} confusion={cm.as_list()}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    data = cfg.load_dataset()
    algos = cfg.sweep_algos()
    for algo in algos:
        if algo not in ALGOS:
            raise ConfigError(f"unknown algorithm {algo!r} in sweep.algos")
    spec = ExperimentSpec(
        algos=algos,
        params=cfg.sweep_params(),
        n_runs=cfg["sweep.n_runs"],
        base_seed=cfg["seed"],
        train_fraction=cfg["train_fraction"],
        fixed_split=cfg["sweep.fixed_split"],
        tree=cfg.tree_config(),
        ensemble=cfg.ensemble_config("adaboost"),
        ensembles={a: cfg.ensemble_config(a) for a in algos if a != "c45"},
        dataset_name=cfg["dataset.kind"],
    )
    start = time.perf_counter()
    result = run_experiment(data, spec, jobs=args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.write_table(out / "results.csv")
    result.write_curve(out / "curve.csv")
    (out / "runs.json").write_text(result.to_json(cfg.provenance()))
    (out / "config.txt").write_text(cfg.to_text())
    for a in result.aggregates():
        print(f"{a['algo']:9s} x={a['x']:<6g} kappa={a['mean_kappa']:.4f} +- {a['std_kappa']:.4f} (n={a['n_runs']})")
    failed = sum(r.error is not None for r in result.runs)
    if failed:
        print(f"{failed} run(s) failed; see runs.json")
    print(f"wall-clock {time.perf_counter() - start:.2f}s")
    return 0


def cmd_dvcs_gen(args) -> int:
    cfg = _resolve(args)
    params = cfg.dvcs_params()
    data = generate_dvcs(params)
    units_out = args.units_out or f"{args.out}.units"
    data.to_csv(args.out, units_out)
    Path(f"{args.out}.config.json").write_text(json.dumps({"provenance": cfg.provenance()}, indent=1) + "\n")

    sig = data.labels == 1
    sums = {ax: sum(data.columns[f"p{ax}_{p}"] for p in ("e", "p", "g1")) for ax in "xyz"}
    miss_z = np.abs(sums["z"] - params.beam_energy_gev)
    print(f"rows={len(data)} signal={int(sig.sum())} background={int((~sig).sum())}")
    if sig.any():
        worst = max(float(miss_z[sig].max()), float(np.abs(sums["x"][sig]).max()),
                    float(np.abs(sums["y"][sig]).max()))
        print(f"signal: max |sum p - p_beam| = {worst:.3e} GeV (pz_e + pz_p + pz_g1 mean {sums['z'][sig].mean():.4f})")
    if (~sig).any():
        print(f"background: pz_e + pz_p + pz_g1 mean {sums['z'][~sig].mean():.4f}, "
              f"mean |sum pz - E_beam| {miss_z[~sig].mean():.4f} GeV")
    return 0


def _dump_tree(tree: TreeModel, indent: str = "") -> list[str]:
    lines = []

    def walk(i, pad):
        node = tree.nodes[i]
        if node.is_leaf:
            payload = f"value={node.value[0]!r}" if tree.regression else f"p(signal)={node.value[1]:.6g}"
            lines.append(f"{indent}{pad}leaf n={node.n_rows} {payload}")
            return
        tag = " (built here)" if node.constructed else ""
        lines.append(f"{indent}{pad}if {node.source_label()} <= {node.threshold!r}{tag}  [n={node.n_rows}]")
        walk(node.left, pad + "  ")
        lines.append(f"{indent}{pad}else")
        walk(node.right, pad + "  ")

    walk(0, "")
    return lines


def inspect_text(path) -> str:
    raw = json.loads(Path(path).read_text())
    model = load_model(path)
    schema = model_schema(raw)
    prov = raw.get("provenance", {})
    lines = [f"model: {raw['kind']}"]
    if prov:
        lines.append(f"algo={prov.get('algo')} seed={prov.get('seed')} dataset={prov.get('dataset.kind')}")
    feats = _feature_rows(model, schema)
    lines.append(f"built features: {len(feats)}")
    lines += [f"  [{f['tree']}] {f['expr']}  : {f['unit']}" for f in feats]
    if isinstance(model, EnsembleModel):
        lines.append(f"stages: {len(model.trees)} f0={model.f0!r} learning_rate={model.learning_rate!r}"
                     f" stopped_early={model.stopped_early}")
        for i, (tree, w) in enumerate(zip(model.trees, model.stage_weights)):
            lines.append(f"stage {i} weight={w!r}")
            lines += _dump_tree(tree, "  ")
    else:
        lines += _dump_tree(model)
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    sys.stdout.write(inspect_text(args.model))
    return 0


def read_patterns(path) -> list:
    pats = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pats.append(parse_expr(line))
    return pats


def cmd_recurrence(args) -> int:
    result = ExperimentResult.from_json(Path(args.runs).read_text())
    patterns = read_patterns(args.patterns)
    fractions = recurrence_stats(result, patterns)
    for p, f in zip(patterns, fractions):
        print(f"{f:.3f}  {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treefc", description="Trees and boosted ensembles with "
                                     "unit-aware constructed features.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def settings(p, dataset=True):
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
        p.add_argument("--seed", type=int)
        if dataset:
            p.add_argument("--dataset", choices=("dvcs", "higgs", "csv"))
            p.add_argument("--data", help="input CSV (higgs or csv)")
            p.add_argument("--units", help="column=unit sidecar for generic CSV")
            p.add_argument("--n", type=int, help="DVCS events to generate")
            p.add_argument("--smear", type=float, help="DVCS relative smearing")

    p = sub.add_parser("fit", help="train on 80%% of the data and score the held-out rest")
    settings(p)
    p.add_argument("--algo", choices=ALGOS)
    p.add_argument("--nmax", type=int, help="C4.5 constructed-feature budget")
    p.add_argument("--p-build", type=float, help="ensemble per-tree construction rate")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="model.json")
    p.add_argument("--report", default="report.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="label every row of a dataset with a saved model")
    settings(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="multi-seed grid over algorithms and budgets")
    settings(p)
    p.add_argument("--algos", help="comma list, e.g. c45,adaboost")
    p.add_argument("--params", help="comma list of N_max / p_build values")
    p.add_argument("--runs", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="sweep_out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dvcs-gen", help="write a synthetic DVCS / pi0 dataset")
    settings(p, dataset=False)
    p.add_argument("--n", type=int)
    p.add_argument("--smear", type=float)
    p.add_argument("--signal-fraction", type=float)
    p.add_argument("--beam", type=float)
    p.add_argument("--out", default="dvcs.csv")
    p.add_argument("--units-out")
    p.set_defaults(func=cmd_dvcs_gen)

    p = sub.add_parser("inspect", help="print a saved model")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("recurrence", help="fraction of sweep runs whose built features contain each pattern")
    p.add_argument("--runs", required=True, help="runs.json from sweep")
    p.add_argument("--patterns", required=True, help="one expression per line")
    p.set_defaults(func=cmd_recurrence)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TreeFCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
