"""Verified probabilistic region-of-attraction bounds for stochastic systems.

The pipeline: fit a neural Zubov value function by simulation + PDE residual
(`sim`, `net`), solve the linearized stochastic Lyapunov equation (`linlyap`),
certify decrease and inclusion conditions with interval branch-and-bound
(`verify`), and compose everything into a pointwise lower bound on the
probability of attraction (`attraction`). `smt` renders any certified
condition as an SMT-LIB2 script for external replay; `cli` wires the stages
into subcommands.
"""

from .attraction import (
    CompositeCertificate,
    ValidationReport,
    heatmap,
    p_lower_bound,
    p_lower_bound_many,
    validate_bound,
)
from .config import RunConfig, config_from_dict, load_config
from .errors import (
    ConfigError,
    LinearAlgebraError,
    NonFiniteError,
    ParseError,
    RoaboundError,
    SystemDefinitionError,
    TrainingError,
    VerificationError,
)
from .expr import parse
from .intervals import Box, Interval
from .linlyap import (
    QuadraticCertificate,
    find_local_level,
    solve_stochastic_lyapunov,
)
from .net import NeuralFunction, TrainConfig, load_checkpoint, save_checkpoint, train
from .sim import SimConfig, estimate_attraction, estimate_value, simulate_path
from .smt import export_smt
from .system import StochasticSystem, generator_apply, linearize, system_from_dict
from .verify import (
    Condition,
    Constraint,
    ExprBoxFunction,
    NetGenerator,
    NetValue,
    VerifyOutcome,
    check,
    check_inclusion,
    find_largest_level,
    find_smallest_lower_level,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "CompositeCertificate",
    "Condition",
    "ConfigError",
    "Constraint",
    "ExprBoxFunction",
    "Interval",
    "LinearAlgebraError",
    "NetGenerator",
    "NetValue",
    "NeuralFunction",
    "NonFiniteError",
    "ParseError",
    "QuadraticCertificate",
    "RoaboundError",
    "RunConfig",
    "SimConfig",
    "StochasticSystem",
    "SystemDefinitionError",
    "TrainConfig",
    "TrainingError",
    "ValidationReport",
    "VerificationError",
    "VerifyOutcome",
    "check",
    "check_inclusion",
    "config_from_dict",
    "estimate_attraction",
    "estimate_value",
    "export_smt",
    "find_largest_level",
    "find_local_level",
    "find_smallest_lower_level",
    "generator_apply",
    "heatmap",
    "linearize",
    "load_checkpoint",
    "load_config",
    "p_lower_bound",
    "p_lower_bound_many",
    "parse",
    "save_checkpoint",
    "simulate_path",
    "solve_stochastic_lyapunov",
    "system_from_dict",
    "train",
    "validate_bound",
]
