"""Quantum channel capacities and assisted randomness-distribution protocols, simulated exactly."""

from .capacity import (
    CapacityReport,
    SolverOptions,
    blahut_arimoto,
    brute_force_qubit_mi,
    channel_mutual_information,
    holevo_information,
)
from .core import (
    Channel,
    DensityOperator,
    Povm,
    PureState,
    Register,
    apply,
    example_channel_F,
    measure,
    partial_trace,
    tensor,
)
from .errors import DimensionError, InfeasibleError, QrandError, RegisterError, ValidationError
from .measures import Ensemble, holevo_quantity, mutual_information, von_neumann_entropy
from .protocol import Protocol, TraceReport, chi_converse_check, goodness, mi_audit, run_exact

__version__ = "0.1.0"

__all__ = [
    "CapacityReport",
    "Channel",
    "DensityOperator",
    "DimensionError",
    "Ensemble",
    "InfeasibleError",
    "Povm",
    "Protocol",
    "PureState",
    "QrandError",
    "Register",
    "RegisterError",
    "SolverOptions",
    "TraceReport",
    "ValidationError",
    "apply",
    "blahut_arimoto",
    "brute_force_qubit_mi",
    "channel_mutual_information",
    "chi_converse_check",
    "example_channel_F",
    "goodness",
    "holevo_information",
    "holevo_quantity",
    "measure",
    "mi_audit",
    "mutual_information",
    "partial_trace",
    "run_exact",
    "tensor",
    "von_neumann_entropy",
]
