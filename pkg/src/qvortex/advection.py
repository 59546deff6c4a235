"""Material-contour advection and the Kelvin circulation monitor.

Contour points follow dr/dt = v(r, t).  Circulation along an advected
contour is conserved as long as the contour only visits points where the
velocity field is defined; the run halts with ``SingularityEncountered`` as
soon as that assumption fails (a point reaches the density floor or the speed
cap, the adaptive step underflows, or the charge of the contour cannot be
measured / jumps between records).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from qvortex import kernels
from qvortex.errors import AliasingSuspected, InvalidInitialContour, NearNode, NoConvergence
from qvortex.fields import DEFAULT_PROBE, VelocityProbe, WavefunctionField, velocity_and_mask
from qvortex.topology import ChargeRecord, Contour, detect_vortices_2d, measure_charge, winding_number

__all__ = [
    "AdvectionOptions",
    "Outcome",
    "AdvectionRun",
    "KelvinReport",
    "advect_contour",
    "kelvin_monitor",
    "min_node_distance",
    "dopri5_advance",
    "CoupledRun",
    "advect_contour_coupled",
]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass(frozen=True)
class AdvectionOptions:
    rtol: float = 1e-9
    atol: float = 1e-11
    h_min: float = 1e-12
    max_points: int = 1 << 16
    max_steps: int = 2_000_000
    domain: tuple | None = None  # per-axis (lo, hi) pairs flattened: (x0, x1, y0, y1[, z0, z1])
    record_charges: bool = True
    reseed: bool = True  # inserted points become exact material points when the contour knows its initial curve


@dataclass
class Outcome:
    kind: str  # "Completed" | "SingularityEncountered" | "Escaped"
    t: float
    point: np.ndarray | None = None
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "t": float(self.t),
            "point": None if self.point is None else [float(v) for v in self.point],
            "reason": self.reason,
        }


@dataclass
class AdvectionRun:
    history: list = field(default_factory=list)  # [(t, Contour)]
    records: list = field(default_factory=list)  # [ChargeRecord]
    outcome: Outcome | None = None
    trajectories: dict = field(default_factory=dict)  # label -> list of (t, point)

    @property
    def final_contour(self) -> Contour:
        return self.history[-1][1]


class _Halt(Exception):
    def __init__(self, t, point, reason):
        super().__init__(reason)
        self.t = t
        self.point = point
        self.reason = reason


def dopri5_advance(rhs, t: np.ndarray, y: np.ndarray, t_end: float, h: np.ndarray, *, rtol=1e-9, atol=1e-11,
                   h_min=1e-12, max_steps=2_000_000):
    """Advance every row of ``y`` from its own time ``t[i]`` to ``t_end``.

    Each point carries its own step size (embedded Dormand-Prince 5(4) with
    the usual step controller); all active points are evaluated in one
    batched call ``rhs(t_vec, y_batch) -> (dy, bad_mask)``.  A stage landing
    on a ``bad`` point rejects the step for that point.  Raises ``_Halt`` when
    a point starts a step on a bad location or its step size falls below
    ``h_min``.  Returns ``(y, h)`` with the per-point step sizes to reuse.
    """
    y = y.copy()
    t = t.copy()
    h = h.copy()
    steps = 0
    k1_cache = None
    k1_valid = np.zeros(len(y), dtype=bool)
    while True:
        active = np.flatnonzero(t < t_end)
        if len(active) == 0:
            return y, h
        steps += 1
        if steps > max_steps:
            raise _Halt(float(t[active].min()), y[active[0]], "step budget exhausted")
        ta = t[active]
        ya = y[active]
        hh = np.minimum(h[active], t_end - ta)
        ks = np.empty((7,) + ya.shape)
        if k1_cache is None:
            k1_cache = np.zeros_like(y)
        need = ~k1_valid[active]
        if need.any():
            k, bad = rhs(ta[need], ya[need])
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                raise _Halt(float(ta[need][j]), ya[need][j], "velocity undefined at contour point")
            k1_cache[active[need]] = k
            k1_valid[active[need]] = True
        ks[0] = k1_cache[active]
        stage_bad = np.zeros(len(active), dtype=bool)
        for s in range(1, 7):
            incr = sum(_A[s][j] * ks[j] for j in range(s) if _A[s][j] != 0.0)
            ys = ya + hh[:, None] * incr
            ks[s], bad = rhs(ta + _C[s] * hh, ys)
            stage_bad |= bad
        y_new = ya + hh[:, None] * np.tensordot(_B, ks, axes=1)
        err = hh[:, None] * np.tensordot(_E, ks, axes=1)
        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y_new))
        err_norm = np.max(np.abs(err) / scale, axis=1)
        accept = (err_norm <= 1.0) & ~stage_bad & np.isfinite(err_norm)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(err_norm > 0, 0.9 * err_norm ** -0.2, 5.0)
        factor = np.clip(np.nan_to_num(factor, nan=0.2), 0.2, 5.0)
        factor = np.where(stage_bad, 0.25, factor)
        factor = np.where(accept, factor, np.minimum(factor, 1.0))
        h_next = hh * factor
        # keep the uncapped step when a step was shortened only to land on t_end
        h_next = np.where(accept & (hh < h[active]), np.maximum(h_next, h[active]), h_next)
        rej = ~accept
        if rej.any():
            tiny = rej & (h_next < h_min)
            if tiny.any():
                j = int(np.flatnonzero(tiny)[0])
                raise _Halt(float(ta[j]), ya[j], "adaptive step size underflow")
        acc_idx = active[accept]
        y[acc_idx] = y_new[accept]
        landed = ta[accept] + hh[accept]
        # land exactly on t_end when the step was truncated to it
        landed = np.where(hh[accept] >= t_end - ta[accept], t_end, landed)
        t[acc_idx] = landed
        k1_cache[acc_idx] = ks[6][accept]  # first-same-as-last
        h[active] = h_next


def min_node_distance(c: Contour, psi: WavefunctionField, t: float, *, resolution: int = 256) -> float:
    """Smallest distance from a contour point to a node of psi.

    Uses the field's exact ``nodal_distance`` when it has one; otherwise (2D)
    runs the grid detector on the contour's bounding box enlarged by 20 %.
    Returns ``inf`` when no node is present.
    """
    exact = getattr(psi, "nodal_distance_to", None)
    if exact is not None:
        d = np.asarray(exact(c.points, t), dtype=float)
        return float(d.min()) if d.size else math.inf
    if c.dim != 2:
        return math.nan
    lo = c.points.min(axis=0)
    hi = c.points.max(axis=0)
    pad = 0.2 * max(float((hi - lo).max()), 1e-6)
    window = (lo[0] - pad, hi[0] + pad, lo[1] - pad, hi[1] + pad)
    dets = detect_vortices_2d(psi, t, window, resolution)
    if not dets:
        return math.inf
    nodes = np.array([d.position for d in dets])
    return float(kernels.min_distances(c.points, nodes).min())


def _outside(points, domain) -> np.ndarray:
    if domain is None:
        return np.zeros(len(points), dtype=bool)
    lo = np.asarray(domain[0::2], dtype=float)
    hi = np.asarray(domain[1::2], dtype=float)
    return ((points < lo) | (points > hi)).any(axis=1)


def advect_contour(c0: Contour, probe: VelocityProbe, psi: WavefunctionField, t0: float, t1: float,
                   opts: AdvectionOptions | None = None, *, output_times=None, n_outputs: int = 50,
                   track_labels=None, source_time: float | None = None) -> AdvectionRun:
    """Advect the labelled points of ``c0`` through the velocity field of ``psi``.

    Output times default to ``n_outputs`` equal intervals on [t0, t1].  At
    every output time the contour is resampled (label preserving) and a
    :class:`ChargeRecord` is appended.  ``track_labels`` (a collection of
    labels, or ``"all"``) selects points whose trajectories are stored.

    Points inserted by resampling are placed by cubic interpolation; if the
    contour carries a ``source`` parameterisation (and ``opts.reseed``), they
    are instead taken from the initial curve at ``source_time`` (default
    ``t0``) and integrated forward, so every point stays a material point.
    """
    opts = opts or AdvectionOptions()
    if output_times is None:
        output_times = np.linspace(t0, t1, n_outputs + 1)
    output_times = np.asarray(output_times, dtype=float)
    if output_times[0] != t0:
        output_times = np.concatenate([[t0], output_times[output_times > t0]])
    if np.any(np.diff(output_times) <= 0):
        raise ValueError("output times must be strictly increasing")

    def rhs(tv, pts):
        return velocity_and_mask(psi, pts, tv, probe)

    run = AdvectionRun()
    v0, bad0 = rhs(t0, c0.points)
    if bad0.any():
        i = int(np.flatnonzero(bad0)[0])
        raise InvalidInitialContour(f"initial contour point {c0.points[i].tolist()} is nodal or overspeed")
    if _outside(c0.points, opts.domain).any():
        raise InvalidInitialContour("initial contour leaves the domain")
    try:
        first = _record(c0, psi, t0, probe, opts)
    except (NearNode, AliasingSuspected, NoConvergence) as exc:
        raise InvalidInitialContour(f"charge of the initial contour is undefined: {exc}") from exc

    contour = c0
    run.history.append((float(t0), contour.copy()))
    if first is not None:
        run.records.append(first)
    tracked = _select(contour, track_labels)
    run.trajectories = {lab: [(float(t0), contour.points[i].copy())] for lab, i in tracked.items()}

    h = _initial_steps(rhs, t0, contour.points, float(output_times[-1] - t0), opts.h_min)
    src_time = float(t0 if source_time is None else source_time)

    for tb in output_times[1:]:
        t_vec = np.full(len(contour), run.history[-1][0])
        try:
            pts, h = dopri5_advance(rhs, t_vec, contour.points, float(tb), h, rtol=opts.rtol, atol=opts.atol,
                                    h_min=opts.h_min, max_steps=opts.max_steps)
        except _Halt as halt:
            run.outcome = Outcome("SingularityEncountered", halt.t, np.asarray(halt.point), halt.reason)
            return run
        out = _outside(pts, opts.domain)
        if out.any():
            i = int(np.flatnonzero(out)[0])
            run.outcome = Outcome("Escaped", float(tb), pts[i], "contour left the domain")
            return run
        moved = contour.with_points(pts)
        try:
            contour, h = _resample(moved, h, rhs, src_time, float(tb), opts)
        except NoConvergence as exc:
            run.outcome = Outcome("SingularityEncountered", float(tb), _longest_gap_midpoint(moved), str(exc))
            return run
        except _Halt as halt:
            run.outcome = Outcome("SingularityEncountered", halt.t, np.asarray(halt.point),
                                  f"reseeded point: {halt.reason}")
            return run
        try:
            rec = _record(contour, psi, float(tb), probe, opts)
        except (NearNode, AliasingSuspected, NoConvergence) as exc:
            point = getattr(exc, "point", None)
            if point is None:
                point = _longest_gap_midpoint(contour)
            run.outcome = Outcome("SingularityEncountered", float(tb), np.asarray(point), str(exc))
            return run
        if rec is not None and run.records and rec.winding != run.records[-1].winding:
            run.outcome = Outcome(
                "SingularityEncountered",
                float(tb),
                _nearest_to_node(contour, psi, float(tb)),
                f"winding jumped {run.records[-1].winding} -> {rec.winding} between records",
            )
            return run
        run.history.append((float(tb), contour.copy()))
        if rec is not None:
            run.records.append(rec)
        index = {lab: i for i, lab in enumerate(contour.labels)}
        for lab, traj in run.trajectories.items():
            if lab in index:
                traj.append((float(tb), contour.points[index[lab]].copy()))
    run.outcome = Outcome("Completed", float(output_times[-1]))
    return run


def _select(contour: Contour, track_labels) -> dict:
    if track_labels is None:
        return {}
    if isinstance(track_labels, str) and track_labels == "all":
        return {lab: i for i, lab in enumerate(contour.labels)}
    wanted = set(float(x) for x in track_labels)
    return {lab: i for i, lab in enumerate(contour.labels) if lab in wanted}


def _initial_steps(rhs, t0, pts, span, h_min):
    v, _ = rhs(t0, pts)
    speed = np.linalg.norm(v, axis=1)
    scale = np.maximum(np.abs(pts).max(axis=1), 1.0)
    h = np.minimum(1e-2 * scale / np.maximum(speed, 1e-12), 1e-3 * max(span, 1e-12))
    return np.maximum(h, 10 * h_min)


def _resample(moved: Contour, h, rhs, src_time, t_now, opts: AdvectionOptions):
    """Resample after a step; inserted labels are re-integrated from the initial curve when possible."""
    contour = moved
    for _ in range(64):
        new, inserted = contour.resample(max_points=opts.max_points)
        h = _remap_steps(contour, new, h)
        if not inserted:
            return new, h
        if opts.reseed and new.source is not None and t_now > src_time:
            old = set(contour.labels.tolist())
            fresh = np.array([lab not in old for lab in new.labels])
            start = np.asarray(new.source(new.labels[fresh]), dtype=float)
            h0 = _initial_steps(rhs, src_time, start, t_now - src_time, opts.h_min)
            pts, h_fresh = dopri5_advance(rhs, np.full(len(start), src_time), start, t_now, h0, rtol=opts.rtol,
                                          atol=opts.atol, h_min=opts.h_min, max_steps=opts.max_steps)
            new.points[fresh] = pts
            h[fresh] = h_fresh
            contour = new
            continue
        return new, h
    raise NoConvergence("contour resampling did not settle")


def _remap_steps(old: Contour, new: Contour, h: np.ndarray) -> np.ndarray:
    """Carry per-point step sizes over to a resampled contour (new points get the smaller neighbour's)."""
    pos = {lab: i for i, lab in enumerate(old.labels)}
    out = np.empty(len(new))
    for i, lab in enumerate(new.labels):
        j = pos.get(lab)
        out[i] = h[j] if j is not None else np.nan
    if np.isnan(out).any():
        filled = np.where(np.isnan(out), np.inf, out)
        neighbour = np.minimum(np.roll(filled, 1), np.roll(filled, -1))
        for _ in range(64):
            miss = np.isnan(out)
            if not miss.any():
                break
            out[miss] = neighbour[miss]
            filled = np.where(np.isnan(out) | np.isinf(out), np.inf, out)
            neighbour = np.minimum(np.roll(filled, 1), np.roll(filled, -1))
            out[np.isinf(out)] = np.nan
        out[np.isnan(out)] = np.nanmin(h)
    return out


def _nearest_to_node(c: Contour, psi, t) -> np.ndarray:
    exact = getattr(psi, "nodal_distance_to", None)
    if exact is None:
        return _longest_gap_midpoint(c)
    d = np.asarray(exact(c.points, t), dtype=float)
    return c.points[int(np.argmin(d))].copy()


def _longest_gap_midpoint(c: Contour) -> np.ndarray:
    i = int(np.argmax(c.spacing()))
    return 0.5 * (c.points[i] + c.points[(i + 1) % len(c)])


def _record(contour: Contour, psi, t, probe, opts) -> ChargeRecord | None:
    if not opts.record_charges:
        return None
    dist = min_node_distance(contour, psi, t)
    return measure_charge(contour, psi, t, probe, dist)


@dataclass
class KelvinReport:
    classification: str  # "HKT-Respected" | "HKT-Assumption-Broken" | "Inconclusive"
    max_drift: float
    windings: list
    outcome: dict
    pre_winding: int | None = None
    post_winding: int | None = None
    restart_time: float | None = None

    def as_dict(self) -> dict:
        return {
            "classification": self.classification,
            "max_circulation_drift": self.max_drift,
            "windings": [int(w) for w in self.windings],
            "outcome": self.outcome,
            "pre_winding": self.pre_winding,
            "post_winding": self.post_winding,
            "restart_time": self.restart_time,
        }


def kelvin_monitor(run: AdvectionRun, *, psi: WavefunctionField | None = None,
                   restart_time: float | None = None, probe: VelocityProbe = DEFAULT_PROBE) -> KelvinReport:
    """Classify a run against constant circulation along the moving contour.

    ``HKT-Respected``: the run completed and the winding never changed.
    ``HKT-Assumption-Broken``: the contour met a singularity.  If
    ``restart_time`` (and ``psi``) are given, the last regular contour is
    frozen and its winding re-evaluated at ``restart_time``, after the event.
    """
    if len(run.records) < 1:
        raise ValueError("run has no charge records")
    valid = [r for r in run.records if r.valid]
    gamma0 = run.records[0].circulation
    drift = max((abs(r.circulation - gamma0) for r in valid), default=math.nan)
    windings = [r.winding for r in run.records]
    outcome = run.outcome.as_dict() if run.outcome else {"kind": "Unknown"}
    kind = outcome["kind"]
    if kind == "Completed" and len(set(windings)) == 1:
        cls = "HKT-Respected"
    elif kind == "SingularityEncountered":
        cls = "HKT-Assumption-Broken"
    else:
        cls = "Inconclusive"
    report = KelvinReport(cls, float(drift), windings, outcome)
    if restart_time is not None:
        if psi is None:
            raise ValueError("restart requires the field")
        frozen = run.final_contour
        report.pre_winding = int(windings[-1])
        report.post_winding = winding_number(frozen, psi, restart_time, node_floor=probe.node_floor).n
        report.restart_time = float(restart_time)
    return report


# --------------------------------------------------------------------------
# contour advection driven by a grid evolution
# --------------------------------------------------------------------------

@dataclass
class CoupledRun:
    run: AdvectionRun
    final_state: object
    slices: list = field(default_factory=list)  # three states 10 dt apart, ending at the final state
    dt: float = 0.0


def advect_contour_coupled(c0: Contour, state, spec, t1: float, *, probe: VelocityProbe = DEFAULT_PROBE,
                           n_outputs: int = 20, max_points: int = 1 << 16) -> CoupledRun:
    """Advance a grid state and a 2D contour together.

    The grid is stepped with the split-step propagator; contour points take
    classical RK4 steps of length ``4 dt`` whose stages read the velocity of
    the grid frames at ``t``, ``t + 2 dt`` and ``t + 4 dt`` (interpolated
    bicubically).  The contour is resampled after every step (cubic midpoint
    insertion) and a charge record is taken at ``n_outputs`` evenly spaced
    frames.
    """
    from qvortex.evolver import GridField, accuracy_guard, iter_evolution

    if c0.dim != 2:
        raise ValueError("coupled advection works on 2D contours")
    n_steps = max(1, math.ceil((t1 - state.t) / spec.dt - 1e-9))
    n_steps += n_steps % 4 and 4 - n_steps % 4
    dt = (t1 - state.t) / n_steps
    accuracy_guard(state.grid, dt)
    frames_per_out = max(1, (n_steps // 2) // n_outputs)
    opts = AdvectionOptions(max_points=max_points)

    def velocity(gf, pts):
        v, bad = velocity_and_mask(gf, pts, gf.t, probe)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise _Halt(gf.t, pts[i], "contour point reached a node")
        return v

    sub = type(spec)(potential=spec.potential, g=spec.g, dt=dt, t_end=t1, cadence=2)
    frames = iter_evolution(state, sub, t_end=t1, every=2)
    first = next(frames)
    gf0 = GridField.from_state(first)
    run = AdvectionRun()
    contour = c0
    v0, bad0 = velocity_and_mask(gf0, contour.points, gf0.t, probe)
    if bad0.any():
        raise InvalidInitialContour("initial contour touches a node")
    try:
        rec = _record(contour, gf0, gf0.t, probe, opts)
    except (NearNode, AliasingSuspected, NoConvergence) as exc:
        raise InvalidInitialContour(f"charge of the initial contour is undefined: {exc}") from exc
    run.history.append((float(first.t), contour.copy()))
    run.records.append(rec)
    recent = [first]
    last = first
    k = 0
    while True:
        try:
            mid = next(frames)
            end = next(frames)
        except StopIteration:
            break
        recent.extend([mid, end])
        del recent[:-11]
        gf_mid, gf_end = GridField.from_state(mid), GridField.from_state(end)
        H = end.t - last.t
        y = contour.points
        try:
            k1 = velocity(gf0, y)
            k2 = velocity(gf_mid, y + 0.5 * H * k1)
            k3 = velocity(gf_mid, y + 0.5 * H * k2)
            k4 = velocity(gf_end, y + H * k3)
        except _Halt as halt:
            run.outcome = Outcome("SingularityEncountered", halt.t, np.asarray(halt.point), halt.reason)
            return CoupledRun(run, end, _slices(recent), dt)
        y = y + H / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        try:
            contour, _ = contour.with_points(y).resample(max_points)
        except NoConvergence as exc:
            run.outcome = Outcome("SingularityEncountered", end.t, _longest_gap_midpoint(contour), str(exc))
            return CoupledRun(run, end, _slices(recent), dt)
        gf0, last = gf_end, end
        k += 2
        if k % (2 * frames_per_out) == 0 or abs(end.t - t1) < 1e-12:
            try:
                rec = _record(contour, gf0, end.t, probe, opts)
            except (NearNode, AliasingSuspected, NoConvergence) as exc:
                point = getattr(exc, "point", None)
                point = _longest_gap_midpoint(contour) if point is None else point
                run.outcome = Outcome("SingularityEncountered", end.t, np.asarray(point), str(exc))
                return CoupledRun(run, end, _slices(recent), dt)
            run.history.append((float(end.t), contour.copy()))
            run.records.append(rec)
            if rec.winding != run.records[0].winding:
                run.outcome = Outcome("SingularityEncountered", end.t, _longest_gap_midpoint(contour),
                                      f"winding changed {run.records[0].winding} -> {rec.winding}")
                return CoupledRun(run, end, _slices(recent), dt)
    run.outcome = Outcome("Completed", float(last.t))
    return CoupledRun(run, last, _slices(recent), dt)


def _slices(recent: list) -> list:
    # frames are 2 dt apart, so 5 frames make 10 dt
    if len(recent) < 11:
        return []
    return [recent[-11], recent[-6], recent[-1]]
