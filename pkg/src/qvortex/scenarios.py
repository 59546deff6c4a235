"""Closed-form wavefunctions with known vortex kinematics.

* :class:`HoTrapScenario` -- superposition of the two lowest excited states of
  an anisotropic 2D harmonic trap; the central vortex flips its charge at
  E t = pi/2 (E = lambda - 1).
* :class:`RingScenario` -- free-particle vortex ring born at t = -1 and
  annihilated at t = 1.
* :class:`RabiScenario` -- 2D hydrogen Rabi oscillation between the L_z = 1 and
  L_z = 2 excited states; an off-centre n = 1 vortex falls in from infinity and
  merges with the central one into an n = 2 vortex at D t = pi/2.

All wavefunctions are unnormalised (every exported hydrodynamic quantity is
normalisation independent).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from qvortex.errors import OnNodalLine
from qvortex.fields import WavefunctionField, as_points

__all__ = [
    "HoTrapScenario",
    "RingScenario",
    "RabiScenario",
    "RingSlice",
    "ho_wavefunction",
    "ho_velocity",
    "ring_wavefunction",
    "ring_nodal_circle",
    "rabi_wavefunction",
    "rabi_offcenter_vortex_radius",
    "rabi_offcenter_vortex_position",
    "RABI_RADIUS_CAP",
]

RABI_RADIUS_CAP = 50.0


@dataclass(frozen=True)
class HoTrapScenario(WavefunctionField):
    """Anisotropic trap V = x^2/2 + lam^2 y^2/2, oscillator units of the x axis.

    psi = (x e^{-i Ex t} + i alpha y e^{-i Ey t}) exp(-(x^2 + lam y^2)/2)
    """

    lam: float = math.sqrt(2.0)
    alpha: float = 1.0
    nodal_eps: float = 1e-12

    dim = 2
    units_note = "harmonic-oscillator units of the x direction, hbar = m = omega_x = 1"

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be a positive finite number")
        if self.lam == 1.0:
            raise ValueError("lam = 1 makes the beat energy E = lam - 1 vanish; the charge never flips")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive")

    @property
    def E(self) -> float:
        """Beat energy between the two superposed eigenstates."""
        return self.lam - 1.0

    @property
    def Ex(self) -> float:
        return 1.5 + 0.5 * self.lam

    @property
    def Ey(self) -> float:
        return 0.5 + 1.5 * self.lam

    def time_of(self, Et: float) -> float:
        return Et / self.E

    def potential(self, x, y):
        return 0.5 * x**2 + 0.5 * self.lam**2 * y**2

    def _parts(self, p, t):
        x, y = p[:, 0], p[:, 1]
        a = np.exp(-1j * self.Ex * t)
        b = np.exp(-1j * self.Ey * t)
        F = x * a + 1j * self.alpha * y * b
        G = np.exp(-0.5 * (x**2 + self.lam * y**2))
        return x, y, a, b, F, G

    def _psi(self, p, t):
        _, _, _, _, F, G = self._parts(p, t)
        return F * G

    def _grad(self, p, t):
        x, y, a, b, F, G = self._parts(p, t)
        gx = (a - x * F) * G
        gy = (1j * self.alpha * b - self.lam * y * F) * G
        return np.stack([gx, gy], axis=1)

    def _lap(self, p, t):
        x, y, a, b, F, G = self._parts(p, t)
        lam = self.lam
        dxx = (-F - 2 * x * a + x**2 * F) * G
        dyy = (-lam * F - 2j * lam * self.alpha * y * b + lam**2 * y**2 * F) * G
        return dxx + dyy

    def _denominator(self, p, t):
        x, y = p[:, 0], p[:, 1]
        a = self.alpha
        return x**2 + a**2 * y**2 + 2 * a * x * y * np.sin(self.E * t)

    def _vel(self, p, t):
        x, y = p[:, 0], p[:, 1]
        den = self._denominator(p, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = self.alpha * np.cos(self.E * t) / den
        return np.stack([-f * y, f * x], axis=1)

    def nodal_line_distance(self, p, t=None):
        """Distance to the line x + alpha y = 0 (the nodal set at E t = pi/2)."""
        x, single = as_points(p, 2)
        d = np.abs(x[:, 0] + self.alpha * x[:, 1]) / math.hypot(1.0, self.alpha)
        return d[0] if single else d

    def nodal_distance_to(self, p, t: float):
        """Distance to the exact nodal set: the origin, or the whole line x + alpha y = 0 when cos(Et) = 0."""
        x, _ = as_points(p, 2)
        if abs(math.cos(self.E * t)) < 1e-15:
            return self.nodal_line_distance(x)
        return np.hypot(x[:, 0], x[:, 1])


def ho_wavefunction(s: HoTrapScenario, p, t: float = 0.0):
    return s.evaluate(p, t)


def ho_velocity(s: HoTrapScenario, p, t: float = 0.0):
    """Closed-form velocity alpha cos(Et) (-y, x) / (x^2 + alpha^2 y^2 + 2 alpha x y sin(Et)).

    Raises :class:`OnNodalLine` where the denominator (= |psi|^2 / Gaussian^2)
    drops below ``s.nodal_eps``.
    """
    x, single = as_points(p, 2)
    t_arr = np.asarray(t, dtype=float)
    den = s._denominator(x, t_arr)
    if (den < s.nodal_eps).any():
        i = int(np.flatnonzero(den < s.nodal_eps)[0])
        raise OnNodalLine(f"point {x[i].tolist()} lies on the instantaneous nodal set", point=x[i])
    v = s._vel(x, t_arr)
    return v[0] if single else v


@dataclass(frozen=True)
class RingScenario(WavefunctionField):
    """psi = [(x - k t)^2 + y^2 + z^2 - 1 + 3i(z + t)] exp(i k x - i k^2 t / 2)."""

    k: float = 1.0

    dim = 3
    units_note = "dimensionless free-particle units, hbar = m = 1"

    def __post_init__(self):
        if not (self.k >= 0 and math.isfinite(self.k)):
            raise ValueError("k must be a non-negative finite number")

    def _poly(self, p, t):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        return (x - self.k * t) ** 2 + y**2 + z**2 - 1 + 3j * (z + t)

    def _carrier(self, p, t):
        return np.exp(1j * (self.k * p[:, 0] - 0.5 * self.k**2 * t))

    def _psi(self, p, t):
        return self._poly(p, t) * self._carrier(p, t)

    def _grad(self, p, t):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        f = self._poly(p, t)
        c = self._carrier(p, t)
        gx = (2 * (x - self.k * t) + 1j * self.k * f) * c
        gy = (2 * y + 0j) * c
        gz = (2 * z + 3j) * c
        return np.stack([gx, gy, gz], axis=1)

    def _lap(self, p, t):
        x = p[:, 0]
        f = self._poly(p, t)
        c = self._carrier(p, t)
        return (6 + 2j * self.k * 2 * (x - self.k * t) - self.k**2 * f) * c

    def _vel(self, p, t):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        f = self._poly(p, t)
        q = f.real
        w = z + t
        den = np.abs(f) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            vx = self.k - 6 * w * (x - self.k * t) / den
            vy = -6 * w * y / den
            vz = (3 * q - 6 * z * w) / den
        return np.stack([vx, vy, vz], axis=1)

    def nodal_circle(self, t: float):
        return ring_nodal_circle(self, t)

    def nodal_distance_to(self, p, t: float):
        """Distance of 3D points to the nodal ring (``inf`` once it has vanished)."""
        x, _ = as_points(p, 3)
        ring = ring_nodal_circle(self, t)
        if ring is None:
            return np.full(len(x), np.inf)
        center, radius, normal = ring
        d = x - center
        axial = d @ normal
        inplane = np.linalg.norm(d - axial[:, None] * normal, axis=1)
        return np.hypot(axial, inplane - radius)


def ring_wavefunction(s: RingScenario, p, t: float = 0.0):
    return s.evaluate(p, t)


def ring_nodal_circle(s: RingScenario, t: float):
    """``(center, radius, normal)`` of the nodal ring, or ``None`` when |t| > 1."""
    if abs(t) > 1.0:
        return None
    center = np.array([s.k * t, 0.0, -t])
    radius = math.sqrt(max(0.0, 1.0 - t * t))
    return center, radius, np.array([0.0, 0.0, 1.0])


class RingSlice(WavefunctionField):
    """2D section of a 3D field on the plane ``y = y0``, coordinates ``(x, z)``."""

    dim = 2

    def __init__(self, field: WavefunctionField, y0: float = 0.0):
        self.field = field
        self.y0 = float(y0)
        self.units_note = field.units_note

    def embed(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        return np.stack([q[:, 0], np.full(len(q), self.y0), q[:, 1]], axis=1)

    def _psi(self, q, t):
        return self.field._psi(self.embed(q), t)

    def _grad(self, q, t):
        g = self.field._grad(self.embed(q), t)
        return None if g is None else g[:, [0, 2]]


@dataclass(frozen=True)
class RabiScenario(WavefunctionField):
    """2D hydrogen driven between psi1 = r e^{-2r/3} e^{i phi} and psi2 = r^2 e^{-2r/5} e^{2 i phi}.

    psi(t) = cos(Dt) e^{-i E1 t} psi1 + sin(Dt) e^{-i E2 t} psi2, atomic units.
    ``D`` is the dipole coupling, a free parameter.
    """

    D: float = 0.1
    E1: float = -2.0 / 9.0
    E2: float = -2.0 / 25.0
    kappa1: float = 2.0 / 3.0
    kappa2: float = 2.0 / 5.0

    dim = 2
    units_note = "atomic units (hbar = m_e = e = 1)"

    def __post_init__(self):
        if not (self.D > 0 and math.isfinite(self.D)):
            raise ValueError("D must be positive")

    def time_of(self, Dt: float) -> float:
        return Dt / self.D

    def _coeffs(self, t):
        c1 = np.cos(self.D * t) * np.exp(-1j * self.E1 * t)
        c2 = np.sin(self.D * t) * np.exp(-1j * self.E2 * t)
        return c1, c2

    def _psi(self, p, t):
        x, y = p[:, 0], p[:, 1]
        z = x + 1j * y
        r = np.hypot(x, y)
        c1, c2 = self._coeffs(t)
        return c1 * z * np.exp(-self.kappa1 * r) + c2 * z**2 * np.exp(-self.kappa2 * r)

    def _grad(self, p, t):
        x, y = p[:, 0], p[:, 1]
        z = x + 1j * y
        r = np.hypot(x, y)
        safe_r = np.where(r > 0, r, 1.0)
        ux, uy = np.where(r > 0, x / safe_r, 0.0), np.where(r > 0, y / safe_r, 0.0)
        c1, c2 = self._coeffs(t)
        e1 = np.exp(-self.kappa1 * r)
        e2 = np.exp(-self.kappa2 * r)
        gx = c1 * e1 * (1 - self.kappa1 * z * ux) + c2 * e2 * (2 * z - self.kappa2 * z**2 * ux)
        gy = c1 * e1 * (1j - self.kappa1 * z * uy) + c2 * e2 * (2j * z - self.kappa2 * z**2 * uy)
        return np.stack([gx, gy], axis=1)


    def nodes(self, t: float) -> np.ndarray:
        """Node positions: the fixed central vortex plus the moving one when it is finite."""
        out = [np.zeros(2)]
        moving = rabi_offcenter_vortex_position(self, t)
        if moving is not None:
            out.append(moving)
        return np.array(out)

    def nodal_distance_to(self, p, t: float):
        x, _ = as_points(p, 2)
        nodes = self.nodes(t)
        return np.min(np.linalg.norm(x[:, None, :] - nodes[None, :, :], axis=-1), axis=1)


def rabi_wavefunction(s: RabiScenario, p, t: float = 0.0):
    return s.evaluate(p, t)


def _wrap_dt(Dt: float) -> float:
    return math.fmod(math.fmod(Dt, math.pi) + math.pi, math.pi)


def rabi_offcenter_vortex_radius(s: RabiScenario, t: float, radius_cap: float = RABI_RADIUS_CAP, tol: float = 1e-14):
    """Radius of the moving vortex: root of r exp((kappa1 - kappa2) r) = |cot(D t)|.

    Returns ``None`` when the vortex is at infinity (D t a multiple of pi) or
    beyond ``radius_cap``; 0 at D t = pi/2 (mod pi).
    """
    phase = _wrap_dt(s.D * t)
    if phase == 0.0:
        return None
    target = abs(math.cos(phase) / math.sin(phase))
    rate = s.kappa1 - s.kappa2
    lhs = lambda r: r * math.exp(rate * r)  # noqa: E731
    if target == 0.0:
        return 0.0
    if lhs(radius_cap) < target:
        return None
    lo, hi = 0.0, radius_cap
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if lhs(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rabi_offcenter_vortex_position(s: RabiScenario, t: float, radius_cap: float = RABI_RADIUS_CAP):
    """Cartesian position of the moving vortex, or ``None`` when it is at infinity."""
    r = rabi_offcenter_vortex_radius(s, t, radius_cap)
    if r is None:
        return None
    c1, c2 = s._coeffs(t)
    # node condition: c1 e^{-k1 r} + c2 z e^{-k2 r} = 0
    direction = -c1 / c2
    ang = math.atan2(direction.imag, direction.real)
    return np.array([r * math.cos(ang), r * math.sin(ang)])
