"""Derivative-free trust-region reliability-based optimization with sample reweighting."""

from .driver import RunResult, TrParams, run_dftr, run_dftr_no_reweight
from .problems import CantileverConfig, cantilever_problem, gaussian_tail_problem
from .reliability import full_evaluation, reweighted_evaluation
from .sf import run_sf, sf_gradient
from .stochastic import DesignSpace, GaussianFamily, LimitState, RboProblem
from .subproblem import SolverOptions, solve_subproblem
from .surrogate import fit_quadratic, loo_error, surr_constr

__all__ = [
    "CantileverConfig",
    "DesignSpace",
    "GaussianFamily",
    "LimitState",
    "RboProblem",
    "RunResult",
    "SolverOptions",
    "TrParams",
    "cantilever_problem",
    "fit_quadratic",
    "full_evaluation",
    "gaussian_tail_problem",
    "loo_error",
    "reweighted_evaluation",
    "run_dftr",
    "run_dftr_no_reweight",
    "run_sf",
    "sf_gradient",
    "solve_subproblem",
    "surr_constr",
]

__version__ = "0.1.0"
