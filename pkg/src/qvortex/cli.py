"""Command-line runner: ``qvortex run <config> [--set key=value]... [--out DIR] [--format csv,json]``.

Exit status 0 on success, 2 for configuration errors, 3 for runtime failures.
All outputs are deterministic functions of the effective configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from qvortex.advection import AdvectionOptions, advect_contour, advect_contour_coupled, kelvin_monitor, min_node_distance
from qvortex.config import RunConfig, load_config
from qvortex.errors import ConfigError, QVortexError, RuntimeFailure
from qvortex.fields import DEFAULT_PROBE
from qvortex.scenarios import HoTrapScenario, RabiScenario, RingScenario, RingSlice
from qvortex.topology import (
    Contour,
    collect_events,
    detect_vortices_2d,
    detect_vortices_grid,
    measure_charge,
    track_vortices,
)

SCHEMA_VERSION = 1
CONTOUR_COLUMNS_2D = ["t", "label", "x", "y"]
CONTOUR_COLUMNS_3D = ["t", "label", "x", "y", "z"]
CHARGE_COLUMNS = ["epoch", "t", "circulation", "winding", "residual", "valid", "min_node_distance"]


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def build_scenario(cfg: RunConfig):
    name = cfg.scenario
    try:
        if name == "ho-trap":
            return HoTrapScenario(lam=cfg["scenario.lam"], alpha=cfg["scenario.alpha"])
        if name == "ring":
            return RingScenario(k=cfg["scenario.k"])
        if name == "rabi":
            return RabiScenario(D=cfg["scenario.D"])
    except ValueError as exc:
        raise ConfigError(f"invalid scenario parameters: {exc}", "scenario") from None
    raise ConfigError(f"scenario {name!r} has no analytic field", "run.scenario")


def to_time(cfg: RunConfig, psi, value: float) -> float:
    unit = cfg["time.unit"]
    if unit == "t":
        return float(value)
    if unit == "Et" and isinstance(psi, HoTrapScenario):
        return psi.time_of(value)
    if unit == "Dt" and isinstance(psi, RabiScenario):
        return psi.time_of(value)
    raise ConfigError(f"time unit {unit!r} does not apply to scenario {cfg.scenario!r}", "time.unit")


def build_contour(cfg: RunConfig) -> Contour:
    center = cfg["contour.center"]
    n = cfg["contour.points"]
    if cfg["contour.shape"] == "star":
        return Contour.star(center, cfg["contour.radius"], cfg["contour.amplitudes"], cfg["contour.phases"], n)
    return Contour.circle(center, cfg["contour.radius"], n=n, normal=cfg.get("contour.normal"))


def _num(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    return x


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class Outputs:
    """Collects artifacts and writes the ones enabled by ``output.formats``."""

    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.dir = out_dir
        self.formats = cfg.formats
        self.written: list[str] = []

    def _path(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written.append(name)
        return self.dir / name

    def csv(self, name, header, rows):
        if "csv" not in self.formats:
            return
        with open(self._path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])

    def json(self, name, payload: dict):
        if "json" not in self.formats:
            return
        doc = {"schema_version": SCHEMA_VERSION, "config": self.cfg.to_mapping()}
        doc.update(_num(payload))
        with open(self._path(name), "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def _contour_rows(history):
    for t, c in history:
        for lab, p in zip(c.labels, c.points):
            yield [t, lab, *p]


def _charge_rows(records, epochs=None):
    for i, r in enumerate(records):
        epoch = r.t if epochs is None else epochs[i]
        yield [epoch, r.t, r.circulation, r.winding, r.residual, r.valid, r.min_node_distance]


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def run_advect(cfg: RunConfig, out: Outputs, *, hkt_only: bool = False) -> dict:
    psi = build_scenario(cfg)
    c0 = build_contour(cfg)
    times = [to_time(cfg, psi, v) for v in cfg.time_values()]
    opts = AdvectionOptions(rtol=cfg["advect.rtol"], atol=cfg["advect.atol"], reseed=cfg["advect.reseed"])
    run = advect_contour(c0, DEFAULT_PROBE, psi, times[0], times[-1], opts, output_times=times)
    restart = cfg.get("advect.restart_at")
    restart_t = None if restart is None else to_time(cfg, psi, restart)
    report = kelvin_monitor(run, psi=psi if restart_t is not None else None, restart_time=restart_t)
    result = {"experiment": cfg.experiment, "kelvin": report.as_dict(),
              "tolerances": {"rtol": opts.rtol, "atol": opts.atol, "valid_residual": 0.05},
              "points_final": len(run.final_contour)}
    cont = cfg.get("advect.continue_to")
    if cont is not None and run.outcome.kind == "Completed":
        t_cont = to_time(cfg, psi, cont)
        last_t, last_c = run.history[-1]
        if t_cont > last_t:
            more = advect_contour(last_c, DEFAULT_PROBE, psi, last_t, t_cont, opts, n_outputs=1, source_time=times[0])
            result["continuation"] = {"t_end": t_cont, "outcome": more.outcome.as_dict(),
                                      "kelvin": kelvin_monitor(more).as_dict()}
    if not hkt_only:
        cols = CONTOUR_COLUMNS_3D if c0.dim == 3 else CONTOUR_COLUMNS_2D
        out.csv("contours.csv", cols, _contour_rows(run.history))
    out.csv("charges.csv", CHARGE_COLUMNS, _charge_rows(run.records))
    out.json("report.json", result)
    return result


def run_charge_scan(cfg: RunConfig, out: Outputs) -> dict:
    psi = build_scenario(cfg)
    c = build_contour(cfg)
    epochs = cfg.time_values()
    records = []
    for e in epochs:
        t = to_time(cfg, psi, e)
        try:
            records.append(measure_charge(c, psi, t, DEFAULT_PROBE, min_node_distance(c, psi, t)))
        except QVortexError as exc:
            raise RuntimeFailure(f"charge scan failed: {exc}", t) from exc
    out.csv("charges.csv", CHARGE_COLUMNS, _charge_rows(records, epochs))
    result = {"experiment": "charge-scan", "unit": cfg["time.unit"],
              "windings": [int(r.winding) for r in records], "epochs": epochs}
    out.json("report.json", result)
    return result


def run_detect_track(cfg: RunConfig, out: Outputs) -> dict:
    psi = build_scenario(cfg)
    embed = None
    if isinstance(psi, RingScenario):
        psi = RingSlice(psi, cfg["detect.slice_y"])
        embed = psi.embed
    window = tuple(cfg["detect.window"])
    res = cfg["detect.resolution"]
    frames = []
    for e in cfg.time_values():
        t = to_time(cfg, psi if embed is None else psi.field, e)
        frames.append((t, detect_vortices_2d(psi, t, window, res)))
    tracks = track_vortices(frames, window=window, embed=embed)
    events = collect_events(tracks)
    payload = {"tracks": [tr.as_dict() for tr in tracks], "events": [ev.as_dict() for ev in events]}
    out.json("tracks.json", payload)
    result = {"experiment": "detect-track", "n_tracks": len(tracks),
              "events": [ev.as_dict() for ev in events]}
    out.json("report.json", result)
    return result


def run_evolve(cfg: RunConfig, out: Outputs) -> dict:
    from qvortex import evolver as ev

    grid = ev.Grid(cfg["grid.nx"], cfg["grid.ny"], cfg["grid.Lx"], cfg["grid.Ly"])
    dt = cfg["evolve.dt"]
    result: dict = {"experiment": "evolve", "dx": grid.dx, "dy": grid.dy, "dt": dt,
                    "dt_limit": min(grid.dx, grid.dy) ** 2 / math.pi}
    if cfg["evolve.initial"] == "ho-trap":
        s = HoTrapScenario(lam=cfg["scenario.lam"], alpha=cfg["scenario.alpha"])
        t_end = to_time(cfg, s, cfg["evolve.t_end"])
        spec = ev.EvolutionSpec(ev.HarmonicPotential(s.lam), 0.0, dt, t_end, cfg["evolve.cadence"])
        state = ev.sample_field(s, grid, 0.0)
        norm0 = state.norm
        final = ev.evolve(state, spec)
        exact = ev.sample_field(s, grid, final.t).values
        err = np.linalg.norm(final.values - exact) / np.linalg.norm(exact)
        result.update({"initial": "ho-trap", "t_end": final.t, "l2_relative_error": float(err),
                       "norm_drift": abs(final.norm - norm0)})
        _write_state(out, final, 0.0)
        out.json("report.json", result)
        return result

    g = cfg["scenario.g"]
    spec = ev.EvolutionSpec(ev.HarmonicPotential(cfg["scenario.trap_lam"]), g, dt, cfg["evolve.t_end"],
                            cfg["evolve.cadence"])
    if g <= 0:
        raise ConfigError("ground-state preparation needs scenario.g > 0", "scenario.g")
    state = ev.thomas_fermi_state(grid, spec)
    state = ev.imaginary_time(state, spec, cfg["evolve.ground_tau"], dtau=min(dt, result["dt_limit"]))
    center = cfg.get("evolve.imprint_center")
    if center is not None:
        state = ev.imprint_vortex(state, center, cfg["evolve.imprint_charge"])
        if cfg["evolve.relax_tau"] > 0:
            state = ev.imaginary_time(state, spec, cfg["evolve.relax_tau"], dtau=min(dt, result["dt_limit"]))
    norm0 = state.norm
    t_end = state.t + cfg["evolve.t_end"]
    if cfg["contour.shape"] != "none":
        c0 = build_contour(cfg)
        coupled = advect_contour_coupled(c0, state, spec, t_end, n_outputs=cfg["time.steps"])
        run, final, slices = coupled.run, coupled.final_state, coupled.slices
        report = kelvin_monitor(run)
        dists = [r.min_node_distance for r in run.records]
        result.update({"kelvin": report.as_dict(), "min_node_distance": min(dists),
                       "min_node_distance_cells": min(dists) / max(grid.dx, grid.dy),
                       "guard_cells": 5, "guard_satisfied": bool(min(dists) > 5 * max(grid.dx, grid.dy))})
        out.csv("contours.csv", CONTOUR_COLUMNS_2D, _contour_rows(run.history))
        out.csv("charges.csv", CHARGE_COLUMNS, _charge_rows(run.records))
    else:
        frames = list(ev.iter_evolution(state, spec, t_end, every=10))
        final, slices = frames[-1], frames[-3:]
    result["norm_drift"] = abs(final.norm - norm0)
    if len(slices) == 3:
        res = residual_sample(slices, spec, cfg["evolve.residual_points"], cfg["evolve.residual_exclusion"],
                              cfg["evolve.seed"])
        result["residual"] = {"points": len(res), "max": float(res.max()), "median": float(np.median(res)),
                              "density_fraction": 0.1, "exclusion_radius": cfg["evolve.residual_exclusion"]}
    _write_state(out, final, g)
    out.json("report.json", result)
    return result


def residual_sample(slices, spec, n_points: int, exclusion: float, seed: int) -> np.ndarray:
    """Hydrodynamic residual at random grid nodes with density >= 10 % of the peak and > ``exclusion`` from any node."""
    from qvortex import evolver as ev
    from qvortex.kernels import min_distances

    mid = slices[1]
    grid = mid.grid
    rho = mid.density()
    X, Y = grid.mesh()
    dets = detect_vortices_grid(mid.values, grid.x, grid.y)
    ok = rho >= 0.1 * rho.max()
    if dets:
        nodes = np.array([d.position for d in dets])
        dn = min_distances(np.column_stack([X.ravel(), Y.ravel()]), nodes).reshape(X.shape)
        ok &= dn > exclusion
    cand = np.argwhere(ok)
    if len(cand) == 0:
        raise RuntimeFailure("no non-nodal grid points for the residual check", mid.t)
    rng = np.random.default_rng(seed)
    pick = cand[rng.choice(len(cand), size=min(n_points, len(cand)), replace=False)]
    return ev.gpe_hydrodynamic_residual(slices, spec, pick)


def _write_state(out: Outputs, state, g: float) -> None:
    from qvortex import evolver as ev

    out.dir.mkdir(parents=True, exist_ok=True)
    ev.save_checkpoint(out.dir / "state.bin", state, g)
    out.written.append("state.bin")
    if "csv" in out.formats:
        ev.export_csv(out.dir / "state.csv", state)
        out.written.append("state.csv")


EXPERIMENTS = {
    "advect": run_advect,
    "hkt-report": lambda cfg, out: run_advect(cfg, out, hkt_only=True),
    "charge-scan": run_charge_scan,
    "detect-track": run_detect_track,
    "evolve": run_evolve,
}


def run(cfg: RunConfig, out_dir=None) -> dict:
    """Execute the configured experiment and write its artifacts."""
    out = Outputs(cfg, Path(out_dir if out_dir is not None else cfg["output.dir"]))
    try:
        return EXPERIMENTS[cfg.experiment](cfg, out)
    except (ConfigError, RuntimeFailure):
        raise
    except QVortexError as exc:
        raise RuntimeFailure(f"{type(exc).__name__}: {exc}", getattr(exc, "t", None)) from exc


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qvortex", description="Run quantum-vortex experiments from a config file.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config", help="config file path or preset name (fig1, fig2-ring, rabi-merge, gpe-hkt)")
    r.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set scenario.lam=sqrt(2)")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--format", help="comma-separated output formats: csv,json")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    if args.format is not None:
        overrides.append(f"output.formats={args.format}")
    try:
        cfg = load_config(args.config, overrides)
        result = run(cfg)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return 2
    except RuntimeFailure as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    summary = {k: result[k] for k in ("experiment",) if k in result}
    if "kelvin" in result:
        summary["classification"] = result["kelvin"]["classification"]
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
