"""Online stochastic SQP estimation and inference.

The estimator solves ``min E F(x; zeta)`` subject to ``c(x) = 0`` and box
bounds from a stream of samples, and reports plug-in sandwich confidence
intervals for the solution and its multipliers.
"""

from ._jit import backend
from .engine import (
    HessianMode,
    RunResult,
    SsqpConfig,
    SsqpState,
    StepsizeMode,
    initial_state,
    kkt_norm,
    m_estimate,
    run,
    ssqp_step,
)
from .errors import SsqpError
from .harness import ExperimentConfig, ProblemRef, backtest, run_experiment
from .inference import confidence_interval, normality_eta, oracle_omega, plugin_omega, region_membership
from .problem import ActiveSets, PrimalDual, ProblemSpec
from .qp import QpProblem, QpStatus, brute_force_qp, solve_qp

__version__ = "0.1.0"

__all__ = [
    "ActiveSets", "ExperimentConfig", "HessianMode", "PrimalDual", "ProblemRef", "ProblemSpec", "QpProblem",
    "QpStatus", "RunResult", "SsqpConfig", "SsqpError", "SsqpState", "StepsizeMode", "backend", "backtest",
    "brute_force_qp", "confidence_interval", "initial_state", "kkt_norm", "m_estimate", "normality_eta",
    "oracle_omega", "plugin_omega", "region_membership", "run", "run_experiment", "solve_qp", "ssqp_step",
]
