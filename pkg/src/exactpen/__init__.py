"""Smooth exact penalty method for equality- and bound-constrained optimization.

Typical use::

    from exactpen import make_problem, minimize, SolverConfig

    report = minimize(make_problem("hs113"), SolverConfig(sigma=10.0))
"""

from .augsys import AugSystem, InnerSolveError, RankDeficientError, SolveSettings, SolverConfigurationError
from .diagnostics import dense_oracles, threshold_sigma, verify_kkt
from .explicitlin import ExplicitPenaltyEvaluator
from .model import PROBLEMS, Bounds, NlpProblem, make_problem
from .penalty import PenaltyEvaluator
from .scaling import ScalingParams, build_scaling
from .solver import SolveReport, SolverConfig, dual_estimate, minimize

__version__ = "0.1.0"

__all__ = [
    "AugSystem",
    "Bounds",
    "ExplicitPenaltyEvaluator",
    "InnerSolveError",
    "NlpProblem",
    "PROBLEMS",
    "PenaltyEvaluator",
    "RankDeficientError",
    "ScalingParams",
    "SolveReport",
    "SolveSettings",
    "SolverConfig",
    "SolverConfigurationError",
    "build_scaling",
    "dense_oracles",
    "dual_estimate",
    "make_problem",
    "minimize",
    "threshold_sigma",
    "verify_kkt",
]
