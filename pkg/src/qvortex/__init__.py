"""Quantum hydrodynamics of vortices: Madelung fields, topological charge,
material-contour advection and split-step Schrödinger / GP evolution."""

from qvortex.errors import (
    AccuracyGuardViolated,
    AliasingSuspected,
    CenterOutsideBox,
    ConfigError,
    InvalidInitialContour,
    NearNode,
    NoConvergence,
    NoNodeFound,
    NonFiniteValue,
    OnNodalLine,
    QVortexError,
    RuntimeFailure,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyGuardViolated",
    "AliasingSuspected",
    "CenterOutsideBox",
    "ConfigError",
    "InvalidInitialContour",
    "NearNode",
    "NoConvergence",
    "NoNodeFound",
    "NonFiniteValue",
    "OnNodalLine",
    "QVortexError",
    "RuntimeFailure",
]
