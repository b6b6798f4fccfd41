"""Optimal budget allocation for selecting the best of k normal designs with unknown variances."""

from .core import (
    Allocation,
    PosteriorState,
    ProblemInstance,
    RngConfig,
    SufficientStats,
    make_dose_instance,
    make_instance,
    make_synthetic_instance,
    update_stats,
)
from .errors import ConfigurationError, DomainError, EstimationError, OcbaError, SolverError
from .oracle import (
    OracleSolution,
    balance_sum,
    brute_force_allocation,
    inner_allocation,
    known_variance_allocation,
    ocba_approx_allocation,
    optimal_allocation,
)
from .rate import (
    MinimizerPair,
    PairParams,
    g_derivative,
    g_value,
    glynn_rate,
    phi_minimizers,
    u_terms,
    v_rate,
    w_of_r,
)
from .sequential import PolicyKind, PolicyState, Trajectory, run_policy
from .simulate import ExperimentConfig, MacroSummary, estimate_bayes_pfs, frequentist_correct, run_macroreps

__version__ = "0.1.0"
