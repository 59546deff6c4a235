"""Madelung decomposition of complex wavefunctions.

Units are hbar = m = 1 throughout, so the velocity field is simply
``v = grad(chi) = Im(grad(psi) / psi)``.  Every function accepts either a
single point (shape ``(dim,)``) or a batch (shape ``(n, dim)``) and returns a
result of matching leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from qvortex.errors import NearNode

__all__ = [
    "WavefunctionField",
    "FunctionField",
    "PlaneWave",
    "GaussianState",
    "PhaseRotated",
    "VelocityProbe",
    "DEFAULT_PROBE",
    "as_points",
    "density",
    "field_gradient",
    "madelung_velocity",
    "velocity_and_mask",
    "quantum_potential",
    "continuity_residual",
    "discrete_curl_2d",
]


def as_points(p, dim: int) -> tuple[np.ndarray, bool]:
    """Return ``(points with shape (n, dim), was_single)``."""
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("points must be finite")
    return arr, single


def _time_like(t, n: int) -> np.ndarray | float:
    t_arr = np.asarray(t, dtype=float)
    if t_arr.ndim == 0:
        return float(t_arr)
    return np.broadcast_to(t_arr, (n,))


class WavefunctionField:
    """A complex field psi(r, t) that can be evaluated at arbitrary points.

    Subclasses implement :meth:`_psi` on ``(n, dim)`` point arrays.  They may
    also provide closed-form :meth:`_grad`, :meth:`_lap` and :meth:`_vel`;
    otherwise ``None`` is returned and callers fall back to finite differences.
    ``t`` may be a scalar or an array of length ``n``.
    """

    dim: int = 2
    units_note: str = "hbar = m = 1"

    def _psi(self, x: np.ndarray, t) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray, t) -> np.ndarray | None:
        return None

    def _lap(self, x: np.ndarray, t) -> np.ndarray | None:
        return None

    def _vel(self, x: np.ndarray, t) -> np.ndarray | None:
        return None

    @property
    def has_gradient(self) -> bool:
        return type(self)._grad is not WavefunctionField._grad

    @property
    def has_velocity(self) -> bool:
        return type(self)._vel is not WavefunctionField._vel

    def evaluate(self, p, t=0.0):
        x, single = as_points(p, self.dim)
        out = self._psi(x, _time_like(t, len(x)))
        return out[0] if single else out

    def gradient(self, p, t=0.0):
        """Analytic gradient, or ``None`` when the field has none."""
        x, single = as_points(p, self.dim)
        out = self._grad(x, _time_like(t, len(x)))
        if out is None:
            return None
        return out[0] if single else out

    def __call__(self, p, t=0.0):
        return self.evaluate(p, t)


class FunctionField(WavefunctionField):
    """Wrap plain callables ``f(points, t)`` (and optionally ``grad(points, t)``)."""

    def __init__(self, func: Callable, dim: int = 2, grad: Callable | None = None, units_note: str = "hbar = m = 1"):
        self.func = func
        self.dim = dim
        self.grad_func = grad
        self.units_note = units_note

    @property
    def has_gradient(self) -> bool:
        return self.grad_func is not None

    def _psi(self, x, t):
        return np.asarray(self.func(x, t), dtype=complex)

    def _grad(self, x, t):
        if self.grad_func is None:
            return None
        return np.asarray(self.grad_func(x, t), dtype=complex)


@dataclass(frozen=True)
class PlaneWave(WavefunctionField):
    """exp(i k.r - i |k|^2 t / 2), unit modulus everywhere."""

    k: tuple = (1.0, 0.0)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.k)

    def _psi(self, x, t):
        k = np.asarray(self.k, dtype=float)
        return np.exp(1j * (x @ k - 0.5 * (k @ k) * np.asarray(t)))

    def _grad(self, x, t):
        k = np.asarray(self.k, dtype=float)
        return 1j * k[None, :] * self._psi(x, t)[:, None]

    def _lap(self, x, t):
        k = np.asarray(self.k, dtype=float)
        return -(k @ k) * self._psi(x, t)

    def _vel(self, x, t):
        return np.broadcast_to(np.asarray(self.k, dtype=float), x.shape).copy()

    def nodal_distance_to(self, p, t=0.0):
        x, _ = as_points(p, self.dim)
        return np.full(len(x), np.inf)


@dataclass(frozen=True)
class GaussianState(WavefunctionField):
    """Isotropic harmonic-oscillator ground state exp(-|r - c|^2 / 2) (stationary, no phase)."""

    center: tuple = (0.0, 0.0)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.center)

    def _psi(self, x, t):
        d = x - np.asarray(self.center, dtype=float)
        return np.exp(-0.5 * (d * d).sum(axis=1)).astype(complex)

    def _grad(self, x, t):
        d = x - np.asarray(self.center, dtype=float)
        return -d * self._psi(x, t)[:, None]

    def _lap(self, x, t):
        d = x - np.asarray(self.center, dtype=float)
        r2 = (d * d).sum(axis=1)
        return (r2 - x.shape[1]) * self._psi(x, t)


class PhaseRotated(WavefunctionField):
    """``exp(i theta) * base`` -- a global gauge transformation."""

    def __init__(self, base: WavefunctionField, theta: float):
        self.base = base
        self.theta = float(theta)
        self.dim = base.dim
        self.units_note = base.units_note

    @property
    def has_gradient(self) -> bool:
        return self.base.has_gradient

    @property
    def has_velocity(self) -> bool:
        return self.base.has_velocity

    def _psi(self, x, t):
        return np.exp(1j * self.theta) * self.base._psi(x, t)

    def _grad(self, x, t):
        g = self.base._grad(x, t)
        return None if g is None else np.exp(1j * self.theta) * g

    def _lap(self, x, t):
        lap = self.base._lap(x, t)
        return None if lap is None else np.exp(1j * self.theta) * lap

    def _vel(self, x, t):
        return self.base._vel(x, t)


@dataclass(frozen=True)
class VelocityProbe:
    """How velocities are evaluated and when a point counts as nodal.

    ``source="analytic"`` uses the field's closed-form velocity when it has
    one; ``"madelung"`` always goes through Im(grad psi / psi).
    """

    source: Literal["analytic", "madelung"] = "madelung"
    node_floor: float = 1e-12
    speed_cap: float = 1e9
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.source not in ("analytic", "madelung"):
            raise ValueError(f"unknown velocity source {self.source!r}")
        if not (self.node_floor >= 0 and self.speed_cap > 0 and self.fd_step > 0):
            raise ValueError("node_floor must be >= 0, speed_cap and fd_step > 0")


DEFAULT_PROBE = VelocityProbe()


def density(psi: WavefunctionField, p, t=0.0):
    """|psi(p, t)|^2."""
    val = psi.evaluate(p, t)
    return np.abs(val) ** 2


def _fd_gradient(psi: WavefunctionField, x: np.ndarray, t, h: float) -> np.ndarray:
    n, dim = x.shape
    out = np.empty((n, dim), dtype=complex)
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        out[:, k] = (psi._psi(x + e, t) - psi._psi(x - e, t)) / (2 * h)
    return out


def field_gradient(psi: WavefunctionField, x: np.ndarray, t, h: float = 1e-5) -> np.ndarray:
    """Gradient on an ``(n, dim)`` batch: analytic if available, else central differences."""
    g = psi._grad(x, t)
    if g is None:
        g = _fd_gradient(psi, x, t, h)
    return g


def _fd_laplacian(psi: WavefunctionField, x: np.ndarray, t, h: float) -> np.ndarray:
    centre = psi._psi(x, t)
    acc = np.zeros(len(x), dtype=complex)
    for k in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[k] = h
        acc += psi._psi(x + e, t) - 2 * centre + psi._psi(x - e, t)
    return acc / h**2


def _velocity_core(psi: WavefunctionField, x: np.ndarray, t, probe: VelocityProbe):
    t_ = _time_like(t, len(x))
    val = psi._psi(x, t_)
    rho = val.real**2 + val.imag**2
    low = ~(rho >= probe.node_floor)
    v = None
    if probe.source == "analytic" and not low.all():
        v = psi._vel(x, t_)
    if v is None:
        g = field_gradient(psi, x, t_, probe.fd_step)
        safe = np.where(low, 1.0, val)
        v = np.imag(g / safe[:, None])
    v = np.where(low[:, None], 0.0, v)
    speed = np.sqrt((v * v).sum(axis=1))
    fast = ~(speed <= probe.speed_cap)
    return v, low, fast


def velocity_and_mask(psi: WavefunctionField, x: np.ndarray, t, probe: VelocityProbe = DEFAULT_PROBE):
    """Batch velocity without raising.

    Returns ``(v, bad)`` where ``bad`` flags points that are below the density
    floor or above the speed cap; ``v`` is zeroed there.
    """
    v, low, fast = _velocity_core(psi, x, t, probe)
    bad = low | fast
    v[bad] = 0.0
    return v, bad


def madelung_velocity(psi: WavefunctionField, p, t=0.0, probe: VelocityProbe = DEFAULT_PROBE):
    """Velocity v = Im(grad psi / psi) (hbar = m = 1).

    Raises :class:`NearNode` if any requested point lies below the probe's
    density floor or exceeds its speed cap.
    """
    x, single = as_points(p, psi.dim)
    v, low, fast = _velocity_core(psi, x, t, probe)
    if low.any() or fast.any():
        i = int(np.flatnonzero(low | fast)[0])
        reason = "density" if low[i] else "speed"
        raise NearNode(f"velocity undefined near node at {x[i].tolist()} ({reason})", point=x[i], reason=reason)
    return v[0] if single else v


def quantum_potential(psi: WavefunctionField, p, t=0.0, probe: VelocityProbe = DEFAULT_PROBE, h: float = 1e-4):
    """Quantum potential Q = -lap(sqrt(rho)) / (2 sqrt(rho)).

    Uses lap(sqrt rho)/sqrt(rho) = Re(lap psi / psi) + |Im(grad psi / psi)|^2, with
    closed-form derivatives when the field has them.
    """
    x, single = as_points(p, psi.dim)
    t_ = _time_like(t, len(x))
    val = psi._psi(x, t_)
    rho = np.abs(val) ** 2
    if (rho < probe.node_floor).any():
        i = int(np.flatnonzero(rho < probe.node_floor)[0])
        raise NearNode(f"quantum potential undefined at node {x[i].tolist()}", point=x[i])
    grad = psi._grad(x, t_)
    lap = psi._lap(x, t_)
    if grad is None:
        grad = _fd_gradient(psi, x, t_, probe.fd_step)
    if lap is None:
        lap = _fd_laplacian(psi, x, t_, h)
    u = grad / val[:, None]
    q = -0.5 * (np.real(lap / val) + (u.imag**2).sum(axis=1))
    return q[0] if single else q


def _current(psi: WavefunctionField, x, t, h_grad: float) -> np.ndarray:
    val = psi._psi(x, t)
    g = field_gradient(psi, x, t, h_grad)
    return np.imag(np.conj(val)[:, None] * g)


def continuity_residual(psi: WavefunctionField, p, t=0.0, h: float = 1e-4, probe: VelocityProbe = DEFAULT_PROBE):
    """|d rho/dt + div(rho v)| by central differences in time and space.

    ``rho v`` is the probability current Im(conj(psi) grad psi), which is
    regular at nodes, but the residual is still refused at nodal points.
    """
    x, single = as_points(p, psi.dim)
    rho = np.abs(psi._psi(x, t)) ** 2
    if (rho < probe.node_floor).any():
        i = int(np.flatnonzero(rho < probe.node_floor)[0])
        raise NearNode(f"continuity residual requested at node {x[i].tolist()}", point=x[i])
    drho_dt = (np.abs(psi._psi(x, t + h)) ** 2 - np.abs(psi._psi(x, t - h)) ** 2) / (2 * h)
    div = np.zeros(len(x))
    for k in range(psi.dim):
        e = np.zeros(psi.dim)
        e[k] = h
        div += (_current(psi, x + e, t, probe.fd_step)[:, k] - _current(psi, x - e, t, probe.fd_step)[:, k]) / (2 * h)
    res = np.abs(drho_dt + div)
    return res[0] if single else res


def discrete_curl_2d(psi: WavefunctionField, p, t=0.0, h: float = 1e-4, probe: VelocityProbe = DEFAULT_PROBE):
    """dv_y/dx - dv_x/dy by central differences of the Madelung velocity."""
    x, single = as_points(p, 2)
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    dvy_dx = (madelung_velocity(psi, x + ex, t, probe)[:, 1] - madelung_velocity(psi, x - ex, t, probe)[:, 1]) / (2 * h)
    dvx_dy = (madelung_velocity(psi, x + ey, t, probe)[:, 0] - madelung_velocity(psi, x - ey, t, probe)[:, 0]) / (2 * h)
    curl = dvy_dx - dvx_dy
    return curl[0] if single else curl
