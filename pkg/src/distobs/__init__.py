"""Distributed observers and controllers for discrete-time LTI plants over directed graphs."""

from .graph import DirectedGraph, source_components, strongly_connected_components
from .numerics import DEFAULT_TOL, Tolerances
from .plant import Plant, is_detectable, is_stabilizable, theorem1_condition
from .synthesis import GainSet, error_matrix, synthesize_gains, verify_omniscience_certificate
from .weights import WeightMatrix, build_weight_matrix

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TOL",
    "DirectedGraph",
    "GainSet",
    "Plant",
    "Tolerances",
    "WeightMatrix",
    "build_weight_matrix",
    "error_matrix",
    "is_detectable",
    "is_stabilizable",
    "source_components",
    "strongly_connected_components",
    "synthesize_gains",
    "theorem1_condition",
    "verify_omniscience_certificate",
]
