"""Decision trees, AdaBoost and gradient boosting whose split features can be
constructed on the fly by unit-constrained, grammar-guided genetic programming."""

from .criteria import Criterion, best_threshold_info_gain, best_threshold_mse, entropy
from .dataset import Dataset, DvcsGenParams, HiggsOptions, generate_dvcs, load_csv, load_higgs, split_indices
from .ensembles import EnsembleConfig, EnsembleKind, EnsembleModel, fit_ensemble, predict_ensemble
from .errors import TreeFCError
from .expr import ANGLE, DIMLESS, FeatureExpr, UnitClass, eval_columns, gev, infer_unit, parse_expr, pretty_print
from .gp import GpConfig, evolve
from .grammar import Grammar, sample_expr, uniform_matrix
from .metrics import ConfusionMatrix, ExperimentSpec, cohens_kappa, recurrence_stats, run_experiment
from .serialize import load_model, save_model
from .tree import TreeConfig, TreeModel, construction_condition, fit_tree, predict

__version__ = "0.1.0"
