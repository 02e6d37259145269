"""Lower-bound certification and reference solvers for strongly convex finite sums."""

from .analysis import lower_bound_calls, lower_bound_curve, rate_q, regime_table
from .bench import ExperimentConfig, parse_config, run_experiment
from .oracle import ResistingIFO, SingleResistingIFO, StaticIFO, transcript_replay_check
from .problems import FiniteSumProblem, NesterovFunction, build_hard_instance, rls_problem
from .solvers import SOLVERS, SolverConfig, run_solver

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "FiniteSumProblem", "NesterovFunction", "ResistingIFO", "SOLVERS",
    "SingleResistingIFO", "SolverConfig", "StaticIFO", "build_hard_instance",
    "lower_bound_calls", "lower_bound_curve", "parse_config", "rate_q", "regime_table",
    "rls_problem", "run_experiment", "run_solver", "transcript_replay_check",
]
