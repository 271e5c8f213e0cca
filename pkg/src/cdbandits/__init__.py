"""Contextual dueling bandits: von Neumann winners, sparring learners and batch solvers."""

from .batch import (
    BlockGame,
    ClassificationOracle,
    EnumerationOracle,
    ExplorationLog,
    FactoredOracle,
    PolicyVector,
    empirical_meta_matrix,
    estimator_blocks,
    explore_uniform,
    make_oracle,
    mhat_entry,
    payoff_scale,
    policy_vector,
)
from .core import (
    BadParams,
    ClassTooLarge,
    DimensionMismatch,
    DuelError,
    EmptyMixture,
    FactoredMixture,
    FullMappingClass,
    NegativeWeight,
    NonConvergence,
    Policy,
    PolicyClass,
    PolicyMixture,
    PreferenceMatrix,
    RangeViolation,
    SkewSymmetryViolation,
    TabularClass,
    mixture_normalize,
    validate_preference_matrix,
)
from .env import (
    ContextualEnvironment,
    RegretTracker,
    cumulative_regret,
    exact_meta_matrix,
    make_environment,
    regret,
)
from .online import Exp4P, online_to_batch, sparring_exp4p
from .pipeline import Certificate, ConfigError, ExperimentConfig, certify, run_pipeline
from .solvers import HullPoint, SolverReport, approx_project, projected_gd, sparring_fpl
from .winners import GameSolution, WinnerReport, solve_von_neumann, winner_report

__all__ = [name for name in dir() if not name.startswith("_")]
