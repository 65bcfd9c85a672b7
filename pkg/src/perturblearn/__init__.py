"""Causal graphs implied by a generative model, learned from latent perturbations."""

__version__ = "0.1.0"

from .evaluation import (
    EvalProtocol,
    EvalReport,
    FeatureSet,
    build_feature_sets,
    make_splits,
    msle,
    run_protocol,
    select_models,
)
from .graph import (
    CausalGraph,
    GraphConfig,
    GraphCycleError,
    learn_graph,
    markov_blanket,
    threshold_matrix,
    transitive_reduction,
)
from .perturb import PerturbConfig, PerturbationDataset, run_perturbations, standardize
from .regressors import fit_regressor
from .scm import ScmSpec, evaluate, random_spec, sample_latent
from .sparse_fit import InfluenceMatrix, LassoConfig, fit_influence, lasso

__all__ = [
    "CausalGraph", "EvalProtocol", "EvalReport", "FeatureSet", "GraphConfig", "GraphCycleError",
    "InfluenceMatrix", "LassoConfig", "PerturbConfig", "PerturbationDataset", "ScmSpec",
    "build_feature_sets", "evaluate", "fit_influence", "fit_regressor", "lasso", "learn_graph",
    "make_splits", "markov_blanket", "msle", "random_spec", "run_perturbations", "run_protocol",
    "sample_latent", "select_models", "standardize", "threshold_matrix", "transitive_reduction",
]
