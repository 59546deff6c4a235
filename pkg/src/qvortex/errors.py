from __future__ import annotations

import numpy as np


class QVortexError(Exception):
    """Base class for all package errors."""


class NearNode(QVortexError):
    """Raised when a field quantity is requested at (or too close to) a node of psi.

    ``reason`` is ``"density"`` when the density fell below the probe floor and
    ``"speed"`` when the velocity exceeded the probe speed cap.
    """

    def __init__(self, message: str, point=None, reason: str = "density"):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)
        self.reason = reason


class OnNodalLine(NearNode):
    """Closed-form velocity requested on the instantaneous nodal line."""


class NoConvergence(QVortexError):
    pass


class AliasingSuspected(QVortexError):
    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


class NoNodeFound(QVortexError):
    pass


class InvalidInitialContour(QVortexError):
    pass


class AccuracyGuardViolated(QVortexError):
    pass


class NonFiniteValue(QVortexError):
    pass


class CenterOutsideBox(QVortexError):
    pass


class ConfigError(QVortexError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class RuntimeFailure(QVortexError):
    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t!r})")
        self.t = t
