"""Sparse multivariable ARX network identification.

Recovers both the Boolean interconnection topology and the polynomial
coefficients of an ARX network from time-series data, using combined
element+group sparse Bayesian learning solved by reweighting (CCCP), EM, or
a sharing-problem ADMM.
"""
from .admm import AdmmDivergence, solve_sharing_admm, z_update_analytic
from .cccp import Diagnostics, SolveConfig, SolveResult, SolverFailure, solve_cccp, update_hyper
from .dictionary import (
    DictionaryEntry,
    DictionaryEvaluationError,
    build_nonlinear_problem,
    expression_entry,
    hill_activation_entry,
    hill_repression_entry,
    load_dictionary,
    monomial_entry,
)
from .em import solve_em, stationarity_residual
from .metrics import CoeffError, TopologyScore, coeff_inf_error, detect_topology, score_topology
from .model import (
    ArxNetwork,
    GenerationError,
    InstabilityError,
    NetworkTopology,
    PolynomialMatrix,
    TimeSeries,
    boolean_topology,
    load_network,
    load_timeseries,
    random_network,
    save_network,
    save_timeseries,
    simulate,
)
from .objective import (
    GradV,
    Hyperparameters,
    PosteriorGaussian,
    default_hyperparameters,
    eval_L1,
    eval_L2,
    grad_v,
    posterior,
)
from .regression import (
    GroupLayout,
    InsufficientDataError,
    RegressionProblem,
    Weights,
    assemble_network,
    build_problem,
    stack_experiments,
)
from .sgl import SglWeights, prox_sparse_group, solve_sgl, solve_socp

__version__ = "0.1.0"

__all__ = [
    "AdmmDivergence",
    "ArxNetwork",
    "CoeffError",
    "Diagnostics",
    "DictionaryEntry",
    "DictionaryEvaluationError",
    "GenerationError",
    "GradV",
    "GroupLayout",
    "Hyperparameters",
    "InstabilityError",
    "InsufficientDataError",
    "NetworkTopology",
    "PolynomialMatrix",
    "PosteriorGaussian",
    "RegressionProblem",
    "SglWeights",
    "SolveConfig",
    "SolveResult",
    "SolverFailure",
    "TimeSeries",
    "TopologyScore",
    "Weights",
    "assemble_network",
    "boolean_topology",
    "build_nonlinear_problem",
    "build_problem",
    "coeff_inf_error",
    "default_hyperparameters",
    "detect_topology",
    "eval_L1",
    "eval_L2",
    "expression_entry",
    "grad_v",
    "hill_activation_entry",
    "hill_repression_entry",
    "load_dictionary",
    "load_network",
    "load_timeseries",
    "monomial_entry",
    "posterior",
    "prox_sparse_group",
    "random_network",
    "save_network",
    "save_timeseries",
    "score_topology",
    "simulate",
    "solve_cccp",
    "solve_em",
    "solve_sgl",
    "solve_sharing_admm",
    "solve_socp",
    "stack_experiments",
    "stationarity_residual",
    "update_hyper",
    "z_update_analytic",
]
