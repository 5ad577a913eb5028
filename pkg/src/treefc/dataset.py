"""Labeled column tables with per-column units, loaders and the DVCS generator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import BadLabel, InvalidParams, LengthMismatch, MissingUnit, UnexpectedHeader
from .expr import ANGLE, DIMLESS, FeatureExpr, UnitClass, canonicalize, eval_columns, gev, infer_unit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BuiltFeature:
    id: str
    expr: FeatureExpr
    unit: UnitClass
    values: np.ndarray


class Dataset:
    """Column-major labeled table.

    Raw columns are addressed by name; constructed features live in
    ``built`` and are addressed by ids ``"@0"``, ``"@1"``... which cannot
    collide with column names.
    """

    def __init__(
        self,
        columns: Mapping[str, Sequence[float]],
        units: Mapping[str, UnitClass],
        labels: Sequence[int],
        weights: Sequence[float] | None = None,
    ):
        self.columns = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in columns.items()}
        missing = [k for k in self.columns if k not in units]
        if missing:
            raise MissingUnit(f"no unit for column(s) {', '.join(missing)}")
        self.units = {k: units[k] for k in self.columns}
        self.labels = np.asarray(labels)
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            bad = int(np.flatnonzero(~np.isin(self.labels, (0, 1)))[0])
            raise BadLabel(f"label {self.labels[bad]!r} at row {bad} is not 0/1")
        self.labels = self.labels.astype(np.int8)
        n = len(self.labels)
        self.weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        for k, v in self.columns.items():
            if v.ndim != 1 or len(v) != n:
                raise LengthMismatch(f"column {k!r} has {len(v)} rows, labels have {n}")
        if len(self.weights) != n:
            raise LengthMismatch(f"weights have {len(self.weights)} rows, labels have {n}")
        if (self.weights < 0).any():
            raise InvalidParams("weights must be nonnegative")
        self.built: list[BuiltFeature] = []
        self._built_index: dict[FeatureExpr, str] = {}

    def __len__(self):
        return len(self.labels)

    @property
    def schema(self) -> dict[str, UnitClass]:
        return dict(self.units)

    @property
    def column_names(self) -> list[str]:
        return list(self.columns)

    def values(self, key: str) -> np.ndarray:
        if key.startswith("@"):
            return self.built[int(key[1:])].values
        return self.columns[key]

    def built_expr(self, key: str) -> FeatureExpr:
        return self.built[int(key[1:])].expr

    def evaluate(self, expr: FeatureExpr, rows: np.ndarray | None = None, epsilon: float | None = None) -> np.ndarray:
        cols = self.columns if rows is None else {k: v[rows] for k, v in self.columns.items()}
        if epsilon is None:
            return eval_columns(expr, cols)
        return eval_columns(expr, cols, epsilon)

    def append_built_feature(self, expr: FeatureExpr, epsilon: float | None = None) -> str:
        """Materialize ``expr`` over all rows and pool it. Re-appending an
        expression equal up to commutative reordering returns the existing id."""
        unit = infer_unit(expr, self.units)
        key = canonicalize(expr)
        if key in self._built_index:
            return self._built_index[key]
        fid = f"@{len(self.built)}"
        self.built.append(BuiltFeature(fid, expr, unit, self.evaluate(expr, epsilon=epsilon)))
        self._built_index[key] = fid
        return fid

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        out = Dataset({k: v[rows] for k, v in self.columns.items()}, self.units, self.labels[rows], self.weights[rows])
        for bf in self.built:
            out.built.append(BuiltFeature(bf.id, bf.expr, bf.unit, bf.values[rows]))
        out._built_index = dict(self._built_index)
        return out

    def copy(self) -> "Dataset":
        return self.subset(np.arange(len(self)))

    def without_built(self) -> "Dataset":
        return Dataset(self.columns, self.units, self.labels, self.weights)

    def validate(self, training: bool = False) -> None:
        if len(self) == 0:
            raise LengthMismatch("dataset is empty")
        for bf in self.built:
            if not np.array_equal(bf.values, self.evaluate(bf.expr)):
                raise InvalidParams(f"built feature {bf.id} is stale")
        if training and len(np.unique(self.labels)) < 2:
            raise BadLabel("training data must contain both classes")

    def to_csv(self, data_path: str | Path, units_path: str | Path | None = None, include_weights: bool = False) -> None:
        frame = pd.DataFrame(self.columns)
        if include_weights:
            frame["weight"] = self.weights
        frame["label"] = self.labels
        frame.to_csv(data_path, index=False, float_format="%.17g", lineterminator="\n")
        if units_path is not None:
            write_units(self.units, units_path)


def read_units(path: str | Path) -> dict[str, UnitClass]:
    units = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MissingUnit(f"{path}:{lineno}: expected column=unit")
        name, token = (s.strip() for s in line.split("=", 1))
        try:
            units[name] = UnitClass.parse(token)
        except ValueError as exc:
            raise MissingUnit(f"{path}:{lineno}: {exc}") from None
    return units


def write_units(units: Mapping[str, UnitClass], path: str | Path) -> None:
    Path(path).write_text("".join(f"{k}={u.token()}\n" for k, u in units.items()))


def load_csv(data_path: str | Path, units_path: str | Path) -> Dataset:
    """Generic comma-separated input with a ``label`` column, an optional
    ``weight`` column and a ``column=unit`` sidecar for every other column."""
    frame = pd.read_csv(data_path, float_precision="round_trip")
    if "label" not in frame.columns:
        raise UnexpectedHeader(f"{data_path}: no 'label' column")
    units = read_units(units_path)
    feature_cols = [c for c in frame.columns if c not in ("label", "weight")]
    missing = [c for c in feature_cols if c not in units]
    if missing:
        raise MissingUnit(f"no unit declared for column(s) {', '.join(missing)}")
    labels = frame["label"].to_numpy()
    bad = ~np.isin(labels, (0, 1))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise BadLabel(f"row {row}: label {labels[row]!r} not in {{0, 1}}")
    weights = frame["weight"].to_numpy(dtype=np.float64) if "weight" in frame.columns else None
    ds = Dataset({c: frame[c].to_numpy(dtype=np.float64) for c in feature_cols}, units, labels, weights)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# Higgs challenge file

HIGGS_PRIMITIVES = (
    "PRI_tau_pt", "PRI_tau_eta", "PRI_tau_phi",
    "PRI_lep_pt", "PRI_lep_eta", "PRI_lep_phi",
    "PRI_met", "PRI_met_phi", "PRI_met_sumet",
    "PRI_jet_num",
    "PRI_jet_leading_pt", "PRI_jet_leading_eta", "PRI_jet_leading_phi",
    "PRI_jet_subleading_pt", "PRI_jet_subleading_eta", "PRI_jet_subleading_phi",
    "PRI_jet_all_pt",
)
HIGGS_SENTINEL = -999.0


def higgs_units(eta_unit: UnitClass = ANGLE) -> dict[str, UnitClass]:
    units = {}
    for name in HIGGS_PRIMITIVES:
        if name == "PRI_jet_num":
            units[name] = DIMLESS
        elif name.endswith("_phi"):
            units[name] = ANGLE
        elif name.endswith("_eta"):
            units[name] = eta_unit
        else:
            units[name] = gev(1)
    return units


@dataclass(frozen=True)
class HiggsOptions:
    subsample: int | None = None
    seed: int = 0
    impute: str = "median"  # or "keep"
    use_weights: bool = False
    eta_unit: str = "angle"


def load_higgs(path: str | Path, options: HiggsOptions | None = None) -> Dataset:
    """Load the public challenge CSV keeping only the 17 primitive columns."""
    options = options or HiggsOptions()
    if options.impute not in ("median", "keep"):
        raise InvalidParams(f"unknown imputation {options.impute!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    header = pd.read_csv(path, nrows=0).columns
    needed = {"EventId", "Label", *HIGGS_PRIMITIVES}
    if not needed <= set(header):
        raise UnexpectedHeader(f"{path}: missing {sorted(needed - set(header))}")
    weight_col = "Weight" if "Weight" in header else None
    usecols = [*HIGGS_PRIMITIVES, "Label"] + ([weight_col] if weight_col else [])
    frame = pd.read_csv(path, usecols=usecols, float_precision="round_trip")
    if options.subsample is not None and options.subsample < len(frame):
        rng = np.random.default_rng(options.seed)
        keep = np.sort(rng.choice(len(frame), size=options.subsample, replace=False))
        frame = frame.iloc[keep].reset_index(drop=True)
    raw_labels = frame["Label"].astype(str).str.strip()
    if not raw_labels.isin(("s", "b")).all():
        raise BadLabel(f"{path}: labels must be 's' or 'b'")
    labels = (raw_labels == "s").to_numpy().astype(np.int8)
    columns = {}
    for name in HIGGS_PRIMITIVES:
        col = frame[name].to_numpy(dtype=np.float64).copy()
        if options.impute == "median":
            sentinel = col == HIGGS_SENTINEL
            if sentinel.any():
                good = col[~sentinel]
                col[sentinel] = np.median(good) if good.size else 0.0
        columns[name] = col
    weights = None
    if options.use_weights:
        if weight_col is None:
            raise UnexpectedHeader(f"{path}: no Weight column")
        weights = frame[weight_col].to_numpy(dtype=np.float64)
    ds = Dataset(columns, higgs_units(UnitClass.parse(options.eta_unit)), labels, weights)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# synthetic DVCS-style events

PROTON_MASS = 0.938272
PI0_MASS = 0.1349768
DVCS_COLUMNS = ("px_e", "py_e", "pz_e", "px_p", "py_p", "pz_p", "px_g1", "py_g1", "pz_g1")


@dataclass(frozen=True)
class DvcsGenParams:
    n_events: int = 100_000
    beam_energy_gev: float = 10.6
    smear_sigma_rel: float = 0.02
    signal_fraction: float = 0.5
    seed: int = 0

    def check(self):
        if self.n_events <= 0:
            raise InvalidParams("n_events must be > 0")
        if not 0 < self.signal_fraction < 1:
            raise InvalidParams("signal_fraction must be in (0, 1)")
        if self.smear_sigma_rel < 0:
            raise InvalidParams("smear_sigma_rel must be >= 0")
        if self.beam_energy_gev <= 4.0:
            raise InvalidParams("beam_energy_gev must exceed 4 GeV")


def _isotropic(rng, n):
    cos_t = rng.uniform(-1.0, 1.0, n)
    sin_t = np.sqrt(1.0 - cos_t**2)
    phi = rng.uniform(0.0, 2 * math.pi, n)
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


def _two_body(rng, energy, mom, m1, m2):
    """Isotropic two-body decay of parents (energy, 3-momentum); returns the
    lab-frame (energy, momentum) of both daughters. Daughter 2 is built as
    parent minus daughter 1 so momentum balances to rounding."""
    mass = np.sqrt(np.maximum(energy**2 - np.einsum("ij,ij->i", mom, mom), 0.0))
    q = np.sqrt((mass**2 - (m1 + m2) ** 2) * (mass**2 - (m1 - m2) ** 2)) / (2 * mass)
    p1 = q[:, None] * _isotropic(rng, len(energy))
    e1 = np.sqrt(q**2 + m1**2)
    beta = mom / energy[:, None]
    b2 = np.einsum("ij,ij->i", beta, beta)
    gamma = 1.0 / np.sqrt(1.0 - b2)
    bp = np.einsum("ij,ij->i", beta, p1)
    coef = np.where(b2 > 0, (gamma - 1.0) * bp / np.where(b2 > 0, b2, 1.0), 0.0) + gamma * e1
    p1_lab = p1 + coef[:, None] * beta
    e1_lab = gamma * (e1 + bp)
    return (e1_lab, p1_lab), (energy - e1_lab, mom - p1_lab)


def _scattered_electrons(rng, n, beam):
    """Rejection-sample e' kinematics with Q^2 > 1 GeV^2 and W > 1.3 GeV."""
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        e_out = rng.uniform(1.0, beam - 1.0, m)
        theta = np.radians(rng.uniform(7.0, 35.0, m))
        phi = rng.uniform(0.0, 2 * math.pi, m)
        q2 = 4 * beam * e_out * np.sin(theta / 2) ** 2
        w2 = PROTON_MASS**2 + 2 * PROTON_MASS * (beam - e_out) - q2
        ok = (q2 > 1.0) & (w2 > 1.3**2)
        p = e_out[:, None] * np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], 1)
        out = np.vstack([out, p[ok]])
    return out[:n]


def generate_dvcs(params: DvcsGenParams) -> Dataset:
    """Synthetic e p -> e' p gamma (signal) versus e p -> e' p pi0 with one
    recorded decay photon (background), proton target at rest.

    Without smearing every signal event conserves 3-momentum exactly; the
    background misses the undetected photon.
    """
    params.check()
    rng = np.random.default_rng(params.seed)
    n, beam = params.n_events, params.beam_energy_gev
    labels = (rng.random(n) < params.signal_fraction).astype(np.int8)
    pe = _scattered_electrons(rng, n, beam)
    # hadronic system = beam + target - scattered electron
    h_mom = np.array([0.0, 0.0, beam]) - pe
    h_energy = beam + PROTON_MASS - np.linalg.norm(pe, axis=1)

    sig = labels == 1
    pp = np.empty((n, 3))
    pg = np.empty((n, 3))
    (_, p_prot), (_, p_gam) = _two_body(rng, h_energy[sig], h_mom[sig], PROTON_MASS, 0.0)
    pp[sig], pg[sig] = p_prot, p_gam
    bkg = ~sig
    (_, p_prot), (e_pi, p_pi) = _two_body(rng, h_energy[bkg], h_mom[bkg], PROTON_MASS, PI0_MASS)
    (e_g1, p_g1), (e_g2, p_g2) = _two_body(rng, e_pi, p_pi, 0.0, 0.0)
    lead = (e_g1 >= e_g2)[:, None]
    pp[bkg], pg[bkg] = p_prot, np.where(lead, p_g1, p_g2)

    feats = np.hstack([pe, pp, pg])
    if params.smear_sigma_rel > 0:
        feats = feats * (1.0 + params.smear_sigma_rel * rng.standard_normal(feats.shape))
    ds = Dataset({c: feats[:, i] for i, c in enumerate(DVCS_COLUMNS)}, {c: gev(1) for c in DVCS_COLUMNS}, labels)
    ds.validate()
    return ds


def split_indices(n: int, train_fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < train_fraction < 1:
        raise InvalidParams("train_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(n * train_fraction))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def train_test_split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    train, test = split_indices(len(ds), train_fraction, seed)
    return ds.subset(train), ds.subset(test)
