"""Run configuration: flat ``section.key=value`` settings resolved as
defaults <- config file <- command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .dataset import Dataset, DvcsGenParams, HiggsOptions, generate_dvcs, load_csv, load_higgs
from .ensembles import EnsembleConfig, EnsembleKind
from .errors import ConfigError, MissingUnit
from .gp import GpConfig
from .grammar import Grammar, load_transition_matrix, uniform_matrix
from .tree import TreeConfig

DEFAULTS: dict[str, Any] = {
    "dataset.kind": "dvcs",
    "dataset.path": "",
    "dataset.units": "",
    "dataset.subsample": 100_000,
    "dataset.subsample_seed": 0,
    "dataset.impute": "median",
    "dataset.use_weights": False,
    "dataset.eta_unit": "angle",
    "dvcs.n_events": 100_000,
    "dvcs.beam_energy_gev": 10.6,
    "dvcs.smear_sigma_rel": 0.02,
    "dvcs.signal_fraction": 0.5,
    "dvcs.seed": 0,
    "algo": "c45",
    "nmax": 0,
    "p_build": 0.0,
    "seed": 0,
    "train_fraction": 0.8,
    "gp.population_size": 500,
    "gp.generations": 70,
    "gp.generations_down": 6,
    "gp.population_size_down": 0,
    "gp.crossover_prob": 0.9,
    "gp.mutation_prob": 0.1,
    "gp.tournament_size": 3,
    "gp.elitism": 1,
    "gp.retry_cap": 20,
    "grammar.max_depth": 6,
    "grammar.max_power": 4,
    "grammar.epsilon": 1e-12,
    "grammar.transition_file": "",
    "tree.max_tree_depth": 20,
    "tree.min_samples_split": 20,
    "tree.min_leaf": 5,
    "tree.scan_built": True,
    "tree.depth_base": 1,
    "ensemble.n_estimators": 100,
    "ensemble.learning_rate": 0.1,
    "ensemble.share_built": True,
    "ensemble.adaboost_depth": 1,
    "ensemble.gboost_depth": 3,
    "sweep.algos": "c45",
    "sweep.params": "0,1,2,5,10",
    "sweep.n_runs": 10,
    "sweep.fixed_split": False,
}


def _coerce(key: str, raw: Any) -> Any:
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            value = float(text)
            if value != int(value):
                raise ValueError(text)
            return int(value)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {type(default).__name__}") from None
    return text


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, Any]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{origin}:{lineno}: unknown setting {key!r}")
        values[key] = _coerce(key, raw)
    return values


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def resolve(cls, config_file: str | Path | None = None, overrides: Mapping[str, Any] | None = None,
                settings: Iterable[str] = ()) -> "RunConfig":
        values = dict(DEFAULTS)
        if config_file:
            path = Path(config_file)
            if not path.exists():
                raise ConfigError(f"config file {path} not found")
            values.update(parse_config_text(path.read_text(), str(path)))
        for item in settings:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            values.update(parse_config_text(item, "--set"))
        for key, raw in (overrides or {}).items():
            if raw is None:
                continue
            if key not in DEFAULTS:
                raise ConfigError(f"unknown setting {key!r}")
            values[key] = _coerce(key, raw)
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def provenance(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.values.items()))

    @property
    def param(self) -> float:
        return float(self["nmax"]) if self["algo"] == "c45" else float(self["p_build"])

    def grammar(self) -> Grammar:
        path = self["grammar.transition_file"]
        matrix = load_transition_matrix(path) if path else uniform_matrix()
        return Grammar(max_depth=self["grammar.max_depth"], transition=matrix,
                       epsilon=self["grammar.epsilon"], max_power=self["grammar.max_power"])

    def gp_config(self) -> GpConfig:
        return GpConfig(
            population_size=self["gp.population_size"],
            generations=self["gp.generations"],
            generations_down=self["gp.generations_down"],
            population_size_down=self["gp.population_size_down"] or None,
            crossover_prob=self["gp.crossover_prob"],
            mutation_prob=self["gp.mutation_prob"],
            tournament_size=self["gp.tournament_size"],
            elitism=self["gp.elitism"],
            max_depth=self["grammar.max_depth"],
            retry_cap=self["gp.retry_cap"],
            seed=self["seed"],
        )

    def tree_config(self) -> TreeConfig:
        return TreeConfig(
            n_max=self["nmax"],
            max_tree_depth=self["tree.max_tree_depth"],
            min_samples_split=self["tree.min_samples_split"],
            min_leaf=self["tree.min_leaf"],
            gp=self.gp_config(),
            grammar=self.grammar(),
            scan_built=self["tree.scan_built"],
            depth_base=self["tree.depth_base"],
            seed=self["seed"],
        )

    def ensemble_config(self, algo: str | None = None) -> EnsembleConfig:
        algo = algo or self["algo"]
        kind = EnsembleKind.GRADBOOST if algo == "gboost" else EnsembleKind.ADABOOST
        depth = self["ensemble.gboost_depth"] if kind is EnsembleKind.GRADBOOST else self["ensemble.adaboost_depth"]
        return EnsembleConfig(
            kind=kind,
            n_estimators=self["ensemble.n_estimators"],
            learning_rate=self["ensemble.learning_rate"],
            weak_depth=depth,
            p_build=self["p_build"] if algo != "c45" else 0.0,
            tree=self.tree_config(),
            share_built=self["ensemble.share_built"],
            seed=self["seed"],
        )

    def sweep_params(self) -> list[float]:
        try:
            return [float(x) for x in str(self["sweep.params"]).split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"sweep.params: bad list {self['sweep.params']!r}") from None

    def sweep_algos(self) -> list[str]:
        return [a.strip() for a in str(self["sweep.algos"]).split(",") if a.strip()]

    def dvcs_params(self) -> DvcsGenParams:
        return DvcsGenParams(
            n_events=self["dvcs.n_events"],
            beam_energy_gev=self["dvcs.beam_energy_gev"],
            smear_sigma_rel=self["dvcs.smear_sigma_rel"],
            signal_fraction=self["dvcs.signal_fraction"],
            seed=self["dvcs.seed"],
        )

    def load_dataset(self) -> Dataset:
        kind = self["dataset.kind"]
        if kind == "dvcs":
            return generate_dvcs(self.dvcs_params())
        if not self["dataset.path"]:
            raise ConfigError(f"dataset.kind={kind} needs dataset.path (--data)")
        if kind == "higgs":
            sub = self["dataset.subsample"]
            opts = HiggsOptions(subsample=sub or None, seed=self["dataset.subsample_seed"],
                                impute=self["dataset.impute"], use_weights=self["dataset.use_weights"],
                                eta_unit=self["dataset.eta_unit"])
            return load_higgs(self["dataset.path"], opts)
        if kind == "csv":
            if not self["dataset.units"]:
                raise MissingUnit("generic CSV input needs a units file (--units)")
            return load_csv(self["dataset.path"], self["dataset.units"])
        raise ConfigError(f"unknown dataset.kind {kind!r}")
