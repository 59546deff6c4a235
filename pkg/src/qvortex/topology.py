"""Circulation, winding numbers, vortex detection and tracking.

The winding number is computed from wrapped phase increments of psi along a
contour and is an exact integer by construction; the circulation integral of
the Madelung velocity is kept as an independent cross-check (Gamma = 2 pi n
for hbar = m = 1).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from qvortex import kernels
from qvortex.errors import AliasingSuspected, NearNode, NoConvergence, NoNodeFound
from qvortex.fields import (
    DEFAULT_PROBE,
    VelocityProbe,
    WavefunctionField,
    field_gradient,
    madelung_velocity,
)

TWO_PI = 2.0 * math.pi

__all__ = [
    "Contour",
    "ChargeRecord",
    "WindingResult",
    "Detection",
    "TrackEvent",
    "VortexTrack",
    "AmbiguousLinkingWarning",
    "circulation",
    "winding_number",
    "measure_charge",
    "detect_vortices_grid",
    "detect_vortices_2d",
    "track_vortices",
    "collect_events",
    "nodal_circle_fit_3d",
]


# --------------------------------------------------------------------------
# contours
# --------------------------------------------------------------------------

@dataclass
class Contour:
    """Closed polyline with stable per-point labels.

    Labels are floats on [0, 1); a point inserted between two neighbours gets
    the midpoint label, so labels keep the cyclic order of the original
    parameterisation.  ``source`` (optional) maps labels to positions on the
    initial curve.  ``max_spacing``/``min_spacing`` drive :meth:`resample`
    (``min_spacing = 0`` disables point removal).
    """

    points: np.ndarray
    labels: np.ndarray
    min_spacing: float = 0.0
    max_spacing: float = np.inf
    # label -> position on the initial curve, used to reseed inserted points as material points
    source: Callable | None = field(default=None, repr=False, compare=False)

    MIN_POINTS = 16

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float)
        self.labels = np.array(self.labels, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise ValueError("contour points must have shape (n, 2) or (n, 3)")
        if len(self.points) < self.MIN_POINTS:
            raise ValueError(f"a contour needs at least {self.MIN_POINTS} points")
        if self.labels.shape != (len(self.points),):
            raise ValueError("one label per point required")

    @classmethod
    def circle(cls, center, radius: float, n: int = 256, *, normal=None, max_spacing: float | None = None,
               min_spacing: float = 0.0, start_angle: float = 0.0) -> "Contour":
        """Counterclockwise circle.  In 3D ``normal`` fixes the plane (default +z)."""
        center = np.asarray(center, dtype=float)
        ang = start_angle + TWO_PI * np.arange(n) / n
        if center.shape == (2,):
            pts = center + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        elif center.shape == (3,):
            nrm = np.array([0.0, 0.0, 1.0] if normal is None else normal, dtype=float)
            nrm /= np.linalg.norm(nrm)
            helper = np.array([1.0, 0.0, 0.0]) if abs(nrm[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            e1 = np.cross(nrm, np.cross(helper, nrm))
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(nrm, e1)
            pts = center + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
        else:
            raise ValueError("center must have 2 or 3 coordinates")
        spacing = TWO_PI * radius / n
        if max_spacing is None:
            max_spacing = 2.0 * spacing
        source = _CircleSource(center, radius, start_angle, None if center.shape == (2,) else (e1, e2))
        return cls(pts, np.arange(n) / n, min_spacing=min_spacing, max_spacing=max_spacing, source=source)

    @classmethod
    def star(cls, center, radius: float, amplitudes, phases, n: int = 256) -> "Contour":
        """Star-shaped 2D curve r(theta) = radius (1 + sum_k a_k cos(k theta + phi_k))."""
        ang = TWO_PI * np.arange(n) / n
        r = np.full(n, float(radius))
        for k, (a, ph) in enumerate(zip(amplitudes, phases), start=1):
            r += radius * a * np.cos(k * ang + ph)
        if (r <= 0).any():
            raise ValueError("star amplitudes produce a non-positive radius")
        pts = np.asarray(center, dtype=float) + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return cls(pts, ang / TWO_PI, source=_StarSource(center, radius, tuple(amplitudes), tuple(phases)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    def segments(self) -> np.ndarray:
        return np.roll(self.points, -1, axis=0) - self.points

    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.segments(), axis=1)

    def length(self) -> float:
        return float(self.spacing().sum())

    def reversed(self) -> "Contour":
        return Contour(self.points[::-1].copy(), self.labels[::-1].copy(), self.min_spacing, self.max_spacing,
                       self.source)

    def copy(self) -> "Contour":
        return Contour(self.points.copy(), self.labels.copy(), self.min_spacing, self.max_spacing, self.source)

    def with_points(self, points) -> "Contour":
        return Contour(points, self.labels.copy(), self.min_spacing, self.max_spacing, self.source)

    def resample(self, max_points: int = 1 << 16) -> tuple["Contour", int]:
        """Label-preserving resampling.

        Midpoints are inserted (4-point cubic interpolation) into every
        segment longer than ``max_spacing`` until none remains; then, if
        ``min_spacing > 0``, points whose removal keeps both neighbouring
        gaps below ``max_spacing`` are dropped.  Returns the new contour and
        the number of inserted points.  Raises :class:`NoConvergence` if the
        point count would exceed ``max_points``.
        """
        pts, lab = self.points, self.labels
        inserted = 0
        while True:
            nxt = np.roll(pts, -1, axis=0)
            gap = np.linalg.norm(nxt - pts, axis=1)
            long = gap > self.max_spacing
            if not long.any():
                break
            if len(pts) + int(long.sum()) > max_points:
                raise NoConvergence(f"contour resampling exceeds {max_points} points")
            prev = np.roll(pts, 1, axis=0)
            nxt2 = np.roll(pts, -2, axis=0)
            mid = (-prev + 9.0 * pts + 9.0 * nxt - nxt2) / 16.0
            step = (np.roll(lab, -1) - lab + 0.5) % 1.0 - 0.5
            lab_mid = (lab + 0.5 * step) % 1.0
            idx = np.flatnonzero(long)
            order = np.empty(len(pts) + len(idx), dtype=int)
            new_pts = np.empty((len(order), pts.shape[1]))
            new_lab = np.empty(len(order))
            # interleave: each long segment i gets its midpoint right after point i
            shift = np.zeros(len(pts), dtype=int)
            shift[idx] = 1
            pos = np.arange(len(pts)) + np.concatenate([[0], np.cumsum(shift)[:-1]])
            new_pts[pos] = pts
            new_lab[pos] = lab
            new_pts[pos[idx] + 1] = mid[idx]
            new_lab[pos[idx] + 1] = lab_mid[idx]
            pts, lab = new_pts, new_lab
            inserted += len(idx)
        if self.min_spacing > 0 and len(pts) > self.MIN_POINTS:
            keep = np.ones(len(pts), dtype=bool)
            i = 0
            n = len(pts)
            while i < n and keep.sum() > self.MIN_POINTS:
                prev_i = (i - 1) % n
                while not keep[prev_i]:
                    prev_i = (prev_i - 1) % n
                nxt_i = (i + 1) % n
                while not keep[nxt_i]:
                    nxt_i = (nxt_i + 1) % n
                d_prev = np.linalg.norm(pts[i] - pts[prev_i])
                merged = np.linalg.norm(pts[nxt_i] - pts[prev_i])
                if d_prev < self.min_spacing and merged <= self.max_spacing:
                    keep[i] = False
                i += 1
            pts, lab = pts[keep], lab[keep]
        return Contour(pts, lab, self.min_spacing, self.max_spacing, self.source), inserted


@dataclass(frozen=True)
class _CircleSource:
    center: np.ndarray
    radius: float
    start_angle: float
    basis: tuple | None

    def __call__(self, labels) -> np.ndarray:
        ang = self.start_angle + TWO_PI * np.asarray(labels, dtype=float)
        if self.basis is None:
            return self.center + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        e1, e2 = self.basis
        return self.center + self.radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


@dataclass(frozen=True)
class _StarSource:
    center: tuple
    radius: float
    amplitudes: tuple
    phases: tuple

    def __call__(self, labels) -> np.ndarray:
        ang = TWO_PI * np.asarray(labels, dtype=float)
        r = np.full(ang.shape, float(self.radius))
        for k, (a, ph) in enumerate(zip(self.amplitudes, self.phases), start=1):
            r += self.radius * a * np.cos(k * ang + ph)
        return np.asarray(self.center, dtype=float) + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)


# --------------------------------------------------------------------------
# circulation and winding
# --------------------------------------------------------------------------

def circulation(c: Contour, probe: VelocityProbe, psi: WavefunctionField, t: float = 0.0, *,
                rtol: float = 1e-6, max_points: int = 1 << 16) -> float:
    """Line integral of the Madelung velocity around ``c``.

    Each polyline segment is integrated by the trapezoid rule at spacings
    h, h/2, h/4 (point doubling); the two Richardson-corrected estimates are
    compared and segments are bisected until the successive estimates differ
    by less than ``rtol * 2 pi`` in total.  Raises :class:`NearNode` if the
    contour touches the nodal set and :class:`NoConvergence` once more than
    ``max_points`` velocity samples would be needed.
    """
    tol = rtol * TWO_PI
    a = c.points
    b = np.roll(a, -1, axis=0)
    m = 0.5 * (a + b)
    va = madelung_velocity(psi, a, t, probe)
    vb = np.roll(va, -1, axis=0)
    vm = madelung_velocity(psi, m, t, probe)
    total_len = max(c.length(), 1e-300)
    evaluations = 2 * len(a)
    accepted = 0.0
    while len(a):
        if evaluations + 2 * len(a) > max_points:
            raise NoConvergence(
                f"circulation refinement needs more than {max_points} samples (near-singular passage)"
            )
        q1 = 0.5 * (a + m)
        q3 = 0.5 * (m + b)
        v1 = madelung_velocity(psi, q1, t, probe)
        v3 = madelung_velocity(psi, q3, t, probe)
        evaluations += 2 * len(a)
        d = b - a
        t1 = 0.5 * ((va + vb) * d).sum(axis=1)
        t2 = 0.25 * ((va + 2.0 * vm + vb) * d).sum(axis=1)
        t4 = 0.125 * ((va + 2.0 * (v1 + vm + v3) + vb) * d).sum(axis=1)
        coarse = t2 + (t2 - t1) / 3.0
        fine = t4 + (t4 - t2) / 3.0
        seglen = np.linalg.norm(d, axis=1)
        ok = np.abs(fine - coarse) <= tol * seglen / total_len
        accepted += float((fine + (fine - coarse) / 15.0)[ok].sum())
        todo = ~ok
        if not todo.any():
            break
        a, b, m = a[todo], b[todo], m[todo]
        va, vb, vm, v1, v3 = va[todo], vb[todo], vm[todo], v1[todo], v3[todo]
        q1, q3 = q1[todo], q3[todo]
        a, m, b = np.concatenate([a, m]), np.concatenate([q1, q3]), np.concatenate([m, b])
        va, vm, vb = np.concatenate([va, vm]), np.concatenate([v1, v3]), np.concatenate([vm, vb])
    return accepted


@dataclass(frozen=True)
class WindingResult:
    n: int
    residual: float
    max_jump: float
    refined_points: int

    def __int__(self) -> int:
        return self.n

    def __eq__(self, other):
        if isinstance(other, (int, np.integer)):
            return self.n == int(other)
        if isinstance(other, WindingResult):
            return (self.n, self.residual, self.max_jump) == (other.n, other.residual, other.max_jump)
        return NotImplemented

    def __hash__(self):
        return hash(self.n)


def winding_number(c: Contour, psi: WavefunctionField, t: float = 0.0, *, node_floor: float = 1e-12,
                   max_jump: float = math.pi / 2, max_depth: int = 60, max_points: int = 1 << 16) -> WindingResult:
    """Topological charge (1/2 pi) sum of wrapped phase increments of psi along ``c``.

    Segments whose phase jump is >= ``max_jump`` are bisected until every jump
    is below it.  Raises :class:`NearNode` when a sample falls below
    ``node_floor`` in density and :class:`AliasingSuspected` when refinement
    cannot tame a jump.
    """
    pts = c.points
    vals = psi.evaluate(pts, t)
    rho = np.abs(vals) ** 2
    if (rho < node_floor).any():
        i = int(np.flatnonzero(rho < node_floor)[0])
        raise NearNode(f"contour point {pts[i].tolist()} lies on a node", point=pts[i])
    inc = kernels.phase_increments(vals)
    total = 0.0
    biggest = 0.0
    extra = 0
    good = np.abs(inc) < max_jump
    total += float(inc[good].sum())
    if good.any():
        biggest = float(np.abs(inc[good]).max())
    bad = np.flatnonzero(~good)
    a = pts[bad]
    b = np.roll(pts, -1, axis=0)[bad]
    va = vals[bad]
    vb = np.roll(vals, -1)[bad]
    depth = 0
    while len(a):
        depth += 1
        if depth > max_depth or extra + len(a) > max_points:
            i = int(np.argmax(np.abs(np.angle(vb * np.conj(va)))))
            raise AliasingSuspected(
                f"phase jump stays above {max_jump:.3f} after refinement near {a[i].tolist()}",
                point=0.5 * (a[i] + b[i]),
            )
        m = 0.5 * (a + b)
        vm = psi.evaluate(m, t)
        extra += len(m)
        rm = np.abs(vm) ** 2
        if (rm < node_floor).any():
            i = int(np.flatnonzero(rm < node_floor)[0])
            raise NearNode(f"contour passes through a node near {m[i].tolist()}", point=m[i])
        a = np.concatenate([a, m])
        b = np.concatenate([m, b])
        va, vb = np.concatenate([va, vm]), np.concatenate([vm, vb])
        jump = np.angle(vb * np.conj(va))
        done = np.abs(jump) < max_jump
        total += float(jump[done].sum())
        if done.any():
            biggest = max(biggest, float(np.abs(jump[done]).max()))
        a, b, va, vb = a[~done], b[~done], va[~done], vb[~done]
    n = int(round(total / TWO_PI))
    return WindingResult(n=n, residual=abs(total / TWO_PI - n), max_jump=biggest, refined_points=extra)


@dataclass(frozen=True)
class ChargeRecord:
    t: float
    circulation: float
    winding: int
    residual: float
    valid: bool
    min_node_distance: float

    def as_row(self) -> dict:
        return {
            "t": self.t,
            "circulation": self.circulation,
            "winding": self.winding,
            "residual": self.residual,
            "valid": self.valid,
            "min_node_distance": self.min_node_distance,
        }


VALID_RESIDUAL = 0.05


def measure_charge(c: Contour, psi: WavefunctionField, t: float, probe: VelocityProbe = DEFAULT_PROBE,
                   node_distance: float = math.nan) -> ChargeRecord:
    """Circulation and winding of ``c`` at time ``t`` as a :class:`ChargeRecord`.

    Errors from the nodal set propagate (the caller decides whether a
    singular contour is fatal).
    """
    w = winding_number(c, psi, t, node_floor=probe.node_floor)
    gamma = circulation(c, probe, psi, t)
    residual = abs(gamma / TWO_PI - w.n)
    return ChargeRecord(t=float(t), circulation=gamma, winding=w.n, residual=residual,
                        valid=residual < VALID_RESIDUAL, min_node_distance=float(node_distance))


# --------------------------------------------------------------------------
# grid detection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Detection:
    position: np.ndarray
    charge: int

    def as_dict(self) -> dict:
        return {"position": [float(v) for v in self.position], "charge": int(self.charge)}


def _bilinear_zero(c00, c10, c01, c11):
    """Zero of the bilinear interpolant of Re/Im on the unit cell, or ``None``."""
    def f(u, v):
        z = c00 * (1 - u) * (1 - v) + c10 * u * (1 - v) + c01 * (1 - u) * v + c11 * u * v
        return np.array([z.real, z.imag])

    def jac(u, v):
        du = (c10 - c00) * (1 - v) + (c11 - c01) * v
        dv = (c01 - c00) * (1 - u) + (c11 - c10) * u
        return np.array([[du.real, dv.real], [du.imag, dv.imag]])

    u = v = 0.5
    for _ in range(30):
        J = jac(u, v)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if abs(det) < 1e-300:
            return None
        step = np.linalg.solve(J, f(u, v))
        u, v = u - step[0], v - step[1]
        if not (-0.5 <= u <= 1.5 and -0.5 <= v <= 1.5):
            return None
        if abs(step[0]) + abs(step[1]) < 1e-13:
            break
    if -1e-9 <= u <= 1 + 1e-9 and -1e-9 <= v <= 1 + 1e-9:
        return min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0)
    return None


def detect_vortices_grid(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> list[Detection]:
    """Vortices of a sampled field ``values[ix, iy]`` on the tensor grid ``xs x ys``.

    Every cell with non-zero phase winding is located at the zero of the
    bilinear interpolant of (Re psi, Im psi) when it exists inside the cell,
    at the cell centre otherwise.  Same-sign cells within two cells of each
    other (Chebyshev distance) are reported as one detection carrying the
    summed charge: a doubly charged node at a cell centre has edge phase
    steps of exactly pi, so its charge can land in two cells with an empty
    one between them.  Two unit vortices closer than the grid resolves are
    merged the same way.
    """
    values = np.asarray(values, dtype=complex)
    charges = kernels.plaquette_charges(values)
    cells = {}
    for i, j in zip(*np.nonzero(charges)):
        q = int(charges[i, j])
        hx = xs[i + 1] - xs[i]
        hy = ys[j + 1] - ys[j]
        uv = None
        if abs(q) == 1:
            uv = _bilinear_zero(values[i, j], values[i + 1, j], values[i, j + 1], values[i + 1, j + 1])
        if uv is None:
            uv = (0.5, 0.5)
        cells[(int(i), int(j))] = (np.array([xs[i] + uv[0] * hx, ys[j] + uv[1] * hy]), q)
    out = []
    seen = set()
    for start in cells:
        if start in seen:
            continue
        sign = np.sign(cells[start][1])
        group, stack = [], [start]
        seen.add(start)
        while stack:
            c = stack.pop()
            group.append(c)
            i, j = c
            for nb in ((i + a, j + b) for a in range(-2, 3) for b in range(-2, 3)):
                if nb in cells and nb not in seen and np.sign(cells[nb][1]) == sign:
                    seen.add(nb)
                    stack.append(nb)
        group.sort()
        q = sum(cells[c][1] for c in group)
        pos = np.mean([cells[c][0] for c in group], axis=0)
        out.append(Detection(pos, int(q)))
    return out


def grid_axes(window, resolution):
    x0, x1, y0, y1 = (float(v) for v in window)
    if isinstance(resolution, (tuple, list)):
        nx, ny = (int(r) for r in resolution)
    else:
        nx = ny = int(resolution)
    if min(nx, ny) < 16:
        raise ValueError("resolution must be at least 16 points per axis")
    return np.linspace(x0, x1, nx), np.linspace(y0, y1, ny)


def detect_vortices_2d(psi: WavefunctionField, t: float, window=(-2.0, 2.0, -2.0, 2.0),
                       resolution=256) -> list[Detection]:
    """Sample a 2D field on ``window = (xmin, xmax, ymin, ymax)`` and detect its vortices."""
    xs, ys = grid_axes(window, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = psi.evaluate(np.stack([X.ravel(), Y.ravel()], axis=1), t).reshape(X.shape)
    return detect_vortices_grid(vals, xs, ys)


# --------------------------------------------------------------------------
# tracking
# --------------------------------------------------------------------------

class AmbiguousLinkingWarning(UserWarning):
    """Two track/detection assignments tie in distance (resolved by lower track index)."""


EVENT_KINDS = ("Birth", "Annihilation", "Merger", "Split", "ChargeFlip", "EscapedDomain", "EnteredDomain")


@dataclass
class TrackEvent:
    kind: str
    t: float
    position: np.ndarray
    tracks: list[int]
    charge: int = 0

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "t": float(self.t),
            "position": [float(v) for v in self.position],
            "tracks": [int(i) for i in self.tracks],
            "charge": int(self.charge),
        }


@dataclass
class VortexTrack:
    id: int
    times: list[float] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)
    charges: list[int] = field(default_factory=list)
    events: list[TrackEvent] = field(default_factory=list)

    def add(self, t, position, charge):
        self.times.append(float(t))
        self.positions.append(np.asarray(position, dtype=float))
        self.charges.append(int(charge))

    @property
    def charge(self) -> int:
        return self.charges[-1]

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "samples": [
                {"t": t, "position": [float(v) for v in p], "charge": q}
                for t, p, q in zip(self.times, self.positions, self.charges)
            ],
            "events": [e.as_dict() for e in self.events],
        }


def _estimate_gate(frames) -> float:
    worst = 0.0
    for (_, prev), (_, cur) in zip(frames[:-1], frames[1:]):
        if not prev or not cur:
            continue
        p = np.array([d.position for d in prev])
        c = np.array([d.position for d in cur])
        nn = kernels.min_distances(p, c)
        worst = max(worst, float(np.median(nn)))
    return 3.0 * worst


def _near_boundary(pos, window, margin) -> bool:
    if window is None:
        return False
    x0, x1, y0, y1 = window
    return min(pos[0] - x0, x1 - pos[0], pos[1] - y0, y1 - pos[1]) <= margin


def track_vortices(frames, *, gate: float | None = None, min_gate: float = 0.0, pair_radius: float | None = None,
                   window=None, boundary_margin: float | None = None, embed=None) -> list[VortexTrack]:
    """Link per-frame detections into tracks and classify lifecycle events.

    ``frames`` is a time-ordered sequence of ``(t, [Detection, ...])``.
    Linking is greedy nearest-neighbour within ``gate`` (default three times
    the largest per-frame median displacement, at least ``min_gate``).  A
    linked detection whose charge is the negative of the track's charge is a
    ``ChargeFlip``; any other charge change ends the track.  Tracks that end
    or start between two frames are then grouped: charges that combine into
    one detection give ``Merger``/``Split``, opposite-charge pairs within
    ``pair_radius`` give ``Annihilation``/``Birth``, and lone ends near the
    ``window`` boundary give ``EscapedDomain``/``EnteredDomain``.  Event times
    are the midpoints between the bracketing frames.  ``embed`` optionally
    maps 2D positions to output coordinates (e.g. a 3D slice plane) for the
    reported event positions.
    """
    frames = [(float(t), list(dets)) for t, dets in frames]
    if any(b[0] <= a[0] for a, b in zip(frames[:-1], frames[1:])):
        raise ValueError("frames must be strictly time-ordered")
    if gate is None:
        gate = _estimate_gate(frames)
    gate = max(gate, min_gate)
    if pair_radius is None:
        pair_radius = 10.0 * gate
    if boundary_margin is None:
        boundary_margin = gate
    to_out = (lambda p: np.asarray(p, dtype=float)) if embed is None else (lambda p: np.asarray(embed(p), dtype=float).reshape(-1))

    tracks: list[VortexTrack] = []
    active: list[int] = []
    if frames:
        t0, dets0 = frames[0]
        for d in dets0:
            tr = VortexTrack(len(tracks))
            tr.add(t0, d.position, d.charge)
            tracks.append(tr)
            active.append(tr.id)

    def emit(kind, t, pos, ids, charge):
        ev = TrackEvent(kind, t, to_out(pos), sorted(ids), charge)
        for i in ids:
            tracks[i].events.append(ev)

    for (t_prev, _), (t_cur, dets) in zip(frames[:-1], frames[1:]):
        t_ev = 0.5 * (t_prev + t_cur)
        cands = []
        for tid in active:
            last = tracks[tid].positions[-1]
            for j, d in enumerate(dets):
                dist = float(np.linalg.norm(d.position - last))
                if dist <= gate:
                    cands.append((dist, tid, j))
        cands.sort()
        for (d1, i1, j1), (d2, i2, j2) in zip(cands[:-1], cands[1:]):
            if abs(d2 - d1) <= 1e-9 and (i1 == i2 or j1 == j2):
                warnings.warn(
                    f"ambiguous linking at t={t_cur}: tracks {i1}/{i2}, detections {j1}/{j2}",
                    AmbiguousLinkingWarning,
                    stacklevel=2,
                )
        used_t, used_d = set(), set()
        continued = []
        for dist, tid, j in cands:
            if tid in used_t or j in used_d:
                continue
            tr, d = tracks[tid], dets[j]
            if d.charge == tr.charge:
                pass
            elif d.charge == -tr.charge:
                emit("ChargeFlip", t_ev, d.position, [tid], d.charge)
            else:
                continue
            tr.add(t_cur, d.position, d.charge)
            used_t.add(tid)
            used_d.add(j)
            continued.append(tid)
        ended = [tid for tid in active if tid not in used_t]
        started = []
        for j, d in enumerate(dets):
            if j not in used_d:
                tr = VortexTrack(len(tracks))
                tr.add(t_cur, d.position, d.charge)
                tracks.append(tr)
                started.append(tr.id)

        end_pos = {i: tracks[i].positions[-1] for i in ended}
        start_pos = {i: tracks[i].positions[0] for i in started}

        # mergers: one new detection replaces several ended ones with the summed charge
        for s in list(started):
            q = tracks[s].charge
            near = sorted((float(np.linalg.norm(end_pos[e] - start_pos[s])), e) for e in ended)
            near = [e for dist, e in near if dist <= pair_radius]
            for k in range(2, min(len(near), 4) + 1):
                group = near[:k]
                if sum(tracks[e].charge for e in group) == q and all(abs(tracks[e].charge) < abs(q) for e in group):
                    emit("Merger", t_ev, start_pos[s], group + [s], q)
                    ended = [e for e in ended if e not in group]
                    started.remove(s)
                    break
        # splits: one ended track replaced by several new ones with the same total charge
        for e in list(ended):
            q = tracks[e].charge
            near = sorted((float(np.linalg.norm(start_pos[s] - end_pos[e])), s) for s in started)
            near = [s for dist, s in near if dist <= pair_radius]
            for k in range(2, min(len(near), 4) + 1):
                group = near[:k]
                if sum(tracks[s].charge for s in group) == q and all(abs(tracks[s].charge) < abs(q) for s in group):
                    emit("Split", t_ev, end_pos[e], [e] + group, q)
                    started = [s for s in started if s not in group]
                    ended.remove(e)
                    break

        def pair_up(ids, pos):
            pairs, left = [], list(ids)
            cand = []
            for a_i, a in enumerate(left):
                for b in left[a_i + 1:]:
                    if tracks[a].charge == -tracks[b].charge:
                        dist = float(np.linalg.norm(pos[a] - pos[b]))
                        if dist <= pair_radius:
                            cand.append((dist, a, b))
            cand.sort()
            taken = set()
            for dist, a, b in cand:
                if a in taken or b in taken:
                    continue
                taken.update((a, b))
                pairs.append((a, b))
            return pairs, [i for i in left if i not in taken]

        pairs, lone = pair_up(ended, end_pos)
        for a, b in pairs:
            emit("Annihilation", t_ev, 0.5 * (end_pos[a] + end_pos[b]), [a, b], 0)
        for e in lone:
            kind = "EscapedDomain" if _near_boundary(end_pos[e], window, boundary_margin) else "Annihilation"
            emit(kind, t_ev, end_pos[e], [e], tracks[e].charge)
        pairs, lone = pair_up(started, start_pos)
        for a, b in pairs:
            emit("Birth", t_ev, 0.5 * (start_pos[a] + start_pos[b]), [a, b], 0)
        for s in lone:
            kind = "EnteredDomain" if _near_boundary(start_pos[s], window, boundary_margin) else "Birth"
            emit(kind, t_ev, start_pos[s], [s], tracks[s].charge)

        active = continued + [tr.id for tr in tracks if tr.id not in continued and tr.times[-1] == t_cur]
    return tracks


def collect_events(tracks: list[VortexTrack]) -> list[TrackEvent]:
    """Unique events across all tracks, ordered by time."""
    seen, out = set(), []
    for tr in tracks:
        for ev in tr.events:
            if id(ev) not in seen:
                seen.add(id(ev))
                out.append(ev)
    out.sort(key=lambda e: (e.t, EVENT_KINDS.index(e.kind), e.tracks))
    return out


# --------------------------------------------------------------------------
# 3D nodal ring recovery
# --------------------------------------------------------------------------

def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = math.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def _newton_node(psi, p, t, tol=1e-13, max_iter=60, h=1e-6):
    """Gauss-Newton (minimum-norm steps) on (Re psi, Im psi) = 0 in 3D."""
    p = np.asarray(p, dtype=float).copy()
    for _ in range(max_iter):
        val = psi.evaluate(p[None], t)[0]
        g = field_gradient(psi, p[None], t, h)[0]
        J = np.array([g.real, g.imag])
        F = np.array([val.real, val.imag])
        step = np.linalg.lstsq(J, F, rcond=None)[0]
        p -= step
        if not np.isfinite(p).all():
            return None
        if np.linalg.norm(step) < tol * max(1.0, np.linalg.norm(p)):
            return p
    val = psi.evaluate(p[None], t)[0]
    return p if abs(val) < 1e-10 else None


def _trace_loop(psi, start, t, ds, max_steps=20000):
    """March along the nodal line through ``start``; returns the closed loop points."""
    pts = [start]
    p = start
    for k in range(max_steps):
        g = field_gradient(psi, p[None], t)[0]
        tangent = np.cross(g.real, g.imag)
        nrm = np.linalg.norm(tangent)
        if nrm == 0:
            break
        q = _newton_node(psi, p + ds * tangent / nrm, t)
        if q is None:
            break
        pts.append(q)
        p = q
        if k > 8 and np.linalg.norm(q - start) < 1.5 * ds:
            return np.array(pts[:-1]), True
    return np.array(pts), False


def _fit_circle_3d(pts):
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid)
    normal = vt[2]
    e1, e2 = vt[0], vt[1]
    u = (pts - centroid) @ e1
    v = (pts - centroid) @ e2
    A = np.stack([2 * u, 2 * v, np.ones_like(u)], axis=1)
    sol = np.linalg.lstsq(A, u**2 + v**2, rcond=None)[0]
    cu, cv = sol[0], sol[1]
    radius = math.sqrt(max(sol[2] + cu**2 + cv**2, 0.0))
    # geometric refinement
    for _ in range(20):
        du, dv = u - cu, v - cv
        dist = np.hypot(du, dv)
        dist = np.where(dist == 0, 1e-300, dist)
        r_res = dist - radius
        J = np.stack([-du / dist, -dv / dist, -np.ones_like(dist)], axis=1)
        step = np.linalg.lstsq(J, -r_res, rcond=None)[0]
        cu, cv, radius = cu + step[0], cv + step[1], radius + step[2]
        if np.abs(step).max() < 1e-15:
            break
    center = centroid + cu * e1 + cv * e2
    k = int(np.argmax(np.abs(normal)))
    if normal[k] < 0:
        normal = -normal
    return center, abs(radius), normal


def nodal_circle_fit_3d(psi: WavefunctionField, t: float, seed, *, capture: float = 0.5, n_seeds: int = 32,
                        step: float | None = None):
    """Locate a closed nodal line near ``seed`` and fit a circle through it.

    Newton descent on (Re psi, Im psi) from ``seed`` and from ``n_seeds``
    points on a sphere of radius ``capture/2`` around it; the first converged
    node is traced along the nodal line and a least-squares circle is fitted
    to the traced points (or to all converged seeds if tracing fails to
    close).  Returns ``(center, radius, unit normal)``; raises
    :class:`NoNodeFound` when no seed converges within ``capture``.
    """
    seed = np.asarray(seed, dtype=float)
    starts = [seed] + list(seed + 0.5 * capture * _fibonacci_sphere(n_seeds))
    nodes = []
    for s in starts:
        q = _newton_node(psi, s, t)
        if q is not None and np.linalg.norm(q - seed) <= 2.0 * capture:
            nodes.append(q)
    if not nodes:
        raise NoNodeFound(f"no node within {capture} of {seed.tolist()} at t={t}")
    nodes = np.array(nodes)
    spread = float(np.linalg.norm(nodes - nodes.mean(axis=0), axis=1).max())
    if step is None:
        step = min(0.02, max(spread, 1e-3) / 4.0)
    loop, closed = _trace_loop(psi, nodes[0], t, step)
    if closed and len(loop) >= 8:
        return _fit_circle_3d(loop)
    pts = np.concatenate([loop, nodes])
    if len(pts) < 3:
        raise NoNodeFound("too few nodal points to fit a circle")
    return _fit_circle_3d(pts)
