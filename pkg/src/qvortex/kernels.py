"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names dispatch on :data:`qvortex._jit.USE_JIT` (except
``phase_increments``, where the vectorised numpy flavour is faster); both
flavours stay importable (``*_jit`` / ``*_numpy``) so tests and the benchmark
can compare them directly.
"""

from __future__ import annotations

import math

import numpy as np

from qvortex._jit import USE_JIT, njit

TWO_PI = 2.0 * math.pi


# --------------------------------------------------------------------------
# plaquette winding on a sampled complex grid
# --------------------------------------------------------------------------

def plaquette_charges_numpy(psi: np.ndarray) -> np.ndarray:
    """Integer phase winding of every grid cell, traversed counterclockwise.

    ``psi`` is indexed ``[ix, iy]``; the result has shape ``(nx-1, ny-1)``.
    """
    ex = np.angle(psi[1:, :] * np.conj(psi[:-1, :]))
    ey = np.angle(psi[:, 1:] * np.conj(psi[:, :-1]))
    # shared edges enter neighbouring cells with opposite signs
    total = ex[:, :-1] + ey[1:, :] - ex[:, 1:] - ey[:-1, :]
    return np.rint(total / TWO_PI).astype(np.int64)


@njit
def _wrap(d: float) -> float:
    return d - TWO_PI * math.floor(d / TWO_PI + 0.5)


@njit
def plaquette_charges_jit(psi):
    nx, ny = psi.shape
    # one atan2 per node; each edge step is wrapped once and shared by its two
    # cells with opposite signs, so the total charge is conserved even at ties
    ph = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            ph[i, j] = math.atan2(psi[i, j].imag, psi[i, j].real)
    ex = np.empty((nx - 1, ny))
    for i in range(nx - 1):
        for j in range(ny):
            ex[i, j] = _wrap(ph[i + 1, j] - ph[i, j])
    ey = np.empty((nx, ny - 1))
    for i in range(nx):
        for j in range(ny - 1):
            ey[i, j] = _wrap(ph[i, j + 1] - ph[i, j])
    out = np.empty((nx - 1, ny - 1), dtype=np.int64)
    for i in range(nx - 1):
        for j in range(ny - 1):
            s = ex[i, j] + ey[i + 1, j] - ex[i, j + 1] - ey[i, j]
            out[i, j] = int(round(s / TWO_PI))
    return out


# --------------------------------------------------------------------------
# wrapped phase increments along a closed polyline
# --------------------------------------------------------------------------

def phase_increments_numpy(values: np.ndarray) -> np.ndarray:
    """Wrapped phase increments ``arg(psi[i+1] / psi[i])`` around a closed loop."""
    nxt = np.roll(values, -1)
    return np.angle(nxt * np.conj(values))


@njit
def phase_increments_jit(values):
    n = values.shape[0]
    ph = np.empty(n)
    for i in range(n):
        ph[i] = math.atan2(values[i].imag, values[i].real)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        out[i] = _wrap(ph[j] - ph[i])
    return out


# --------------------------------------------------------------------------
# nearest-neighbour distances (contour points vs. node positions)
# --------------------------------------------------------------------------

def min_distances_numpy(points: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """For each point the Euclidean distance to the closest node."""
    if nodes.shape[0] == 0:
        return np.full(points.shape[0], np.inf)
    d2 = ((points[:, None, :] - nodes[None, :, :]) ** 2).sum(axis=-1)
    return np.sqrt(d2.min(axis=1))


@njit
def min_distances_jit(points, nodes):
    n, dim = points.shape
    m = nodes.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        best = np.inf
        for j in range(m):
            s = 0.0
            for k in range(dim):
                diff = points[i, k] - nodes[j, k]
                s += diff * diff
            if s < best:
                best = s
        out[i] = math.sqrt(best)
    return out


# --------------------------------------------------------------------------
# position-space kick of the split-step propagator
# --------------------------------------------------------------------------

def nonlinear_kick_numpy(psi: np.ndarray, potential: np.ndarray, g: float, tau: complex) -> np.ndarray:
    """``psi * exp(-i tau (V + g|psi|^2))``; ``tau`` complex for imaginary time."""
    return psi * np.exp(-1j * tau * (potential + g * (psi.real**2 + psi.imag**2)))


@njit
def nonlinear_kick_jit(psi, potential, g, tau):
    out = np.empty_like(psi)
    nx, ny = psi.shape
    for i in range(nx):
        for j in range(ny):
            z = psi[i, j]
            phase = potential[i, j] + g * (z.real * z.real + z.imag * z.imag)
            out[i, j] = z * np.exp(-1j * tau * phase)
    return out


if USE_JIT:
    def plaquette_charges(psi):
        return plaquette_charges_jit(np.ascontiguousarray(psi, dtype=np.complex128))

    # numpy's vectorised angle() beats the scalar loop here (see benchmarks/)
    phase_increments = phase_increments_numpy

    def min_distances(points, nodes):
        points = np.ascontiguousarray(points, dtype=np.float64)
        nodes = np.ascontiguousarray(nodes, dtype=np.float64).reshape(-1, points.shape[1])
        return min_distances_jit(points, nodes)

    def nonlinear_kick(psi, potential, g, tau):
        return nonlinear_kick_jit(
            np.ascontiguousarray(psi, dtype=np.complex128),
            np.ascontiguousarray(potential, dtype=np.float64),
            float(g),
            complex(tau),
        )
else:
    plaquette_charges = plaquette_charges_numpy
    phase_increments = phase_increments_numpy

    def min_distances(points, nodes):
        points = np.asarray(points, dtype=np.float64)
        nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, points.shape[1])
        return min_distances_numpy(points, nodes)

    nonlinear_kick = nonlinear_kick_numpy


# --------------------------------------------------------------------------
# periodic bicubic Lagrange interpolation (4x4 stencil, no prefilter)
# --------------------------------------------------------------------------

def _lagrange_weights_numpy(u):
    return np.stack([
        -u * (u - 1.0) * (u - 2.0) / 6.0,
        (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
        -(u + 1.0) * u * (u - 2.0) / 2.0,
        (u + 1.0) * u * (u - 1.0) / 6.0,
    ], axis=-1)


def interp_periodic_numpy(arr: np.ndarray, x0: float, dx: float, y0: float, dy: float, pts: np.ndarray) -> np.ndarray:
    """Interpolate ``arr[ix, iy]`` (sampled at x0 + ix dx, y0 + iy dy, periodic) at ``pts``."""
    nx, ny = arr.shape
    fx = (pts[:, 0] - x0) / dx
    fy = (pts[:, 1] - y0) / dy
    ix = np.floor(fx).astype(np.int64)
    iy = np.floor(fy).astype(np.int64)
    wx = _lagrange_weights_numpy(fx - ix)
    wy = _lagrange_weights_numpy(fy - iy)
    out = np.zeros(len(pts), dtype=arr.dtype)
    for a in range(4):
        xi = (ix + a - 1) % nx
        for b in range(4):
            yi = (iy + b - 1) % ny
            out += wx[:, a] * wy[:, b] * arr[xi, yi]
    return out


@njit
def interp_periodic_jit(arr, x0, dx, y0, dy, pts):
    nx, ny = arr.shape
    n = pts.shape[0]
    out = np.zeros(n, dtype=arr.dtype)
    wx = np.empty(4)
    wy = np.empty(4)
    for p in range(n):
        fx = (pts[p, 0] - x0) / dx
        fy = (pts[p, 1] - y0) / dy
        ix = int(math.floor(fx))
        iy = int(math.floor(fy))
        u = fx - ix
        v = fy - iy
        wx[0] = -u * (u - 1.0) * (u - 2.0) / 6.0
        wx[1] = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0
        wx[2] = -(u + 1.0) * u * (u - 2.0) / 2.0
        wx[3] = (u + 1.0) * u * (u - 1.0) / 6.0
        wy[0] = -v * (v - 1.0) * (v - 2.0) / 6.0
        wy[1] = (v + 1.0) * (v - 1.0) * (v - 2.0) / 2.0
        wy[2] = -(v + 1.0) * v * (v - 2.0) / 2.0
        wy[3] = (v + 1.0) * v * (v - 1.0) / 6.0
        acc = arr[0, 0] * 0.0
        for a in range(4):
            xi = (ix + a - 1) % nx
            for b in range(4):
                yi = (iy + b - 1) % ny
                acc += wx[a] * wy[b] * arr[xi, yi]
        out[p] = acc
    return out


if USE_JIT:
    def interp_periodic(arr, x0, dx, y0, dy, pts):
        return interp_periodic_jit(np.ascontiguousarray(arr), float(x0), float(dx), float(y0), float(dy),
                                   np.ascontiguousarray(pts, dtype=np.float64))
else:
    def interp_periodic(arr, x0, dx, y0, dy, pts):
        return interp_periodic_numpy(np.asarray(arr), x0, dx, y0, dy, np.asarray(pts, dtype=np.float64))
