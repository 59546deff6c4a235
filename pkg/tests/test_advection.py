from __future__ import annotations

import math

import numpy as np
import pytest

from qvortex.advection import (
    AdvectionOptions,
    advect_contour,
    dopri5_advance,
    kelvin_monitor,
    min_node_distance,
)
from qvortex.errors import InvalidInitialContour
from qvortex.fields import FunctionField, PlaneWave, VelocityProbe
from qvortex.scenarios import RingScenario
from qvortex.topology import Contour

TWO_PI = 2 * math.pi


def label_positions(c: Contour) -> dict:
    return {float(l): p for l, p in zip(c.labels, c.points)}


def test_dopri_solid_rotation():
    def rhs(t, y):
        return np.stack([-y[:, 1], y[:, 0]], axis=1), np.zeros(len(y), dtype=bool)

    y0 = np.array([[1.0, 0.0], [0.0, 2.0], [-0.3, 0.4]])
    y, h = dopri5_advance(rhs, np.zeros(3), y0, TWO_PI, np.full(3, 0.1))
    np.testing.assert_allclose(y, y0, atol=1e-7)
    assert h.shape == (3,)


def test_short_run_conserves_radius_and_circulation(ho):
    c = Contour.circle((0.5, 0.0), 1.0, n=128)
    r0 = label_positions(c)
    run = advect_contour(c, VelocityProbe(), ho, 0.0, ho.time_of(0.5), n_outputs=5)
    assert run.outcome.kind == "Completed"
    end = label_positions(run.final_contour)
    for lab, p in r0.items():
        assert np.linalg.norm(end[lab]) == pytest.approx(np.linalg.norm(p), rel=1e-6)
    assert all(r.winding == 1 for r in run.records)
    assert max(abs(r.circulation - TWO_PI) for r in run.records) < 1e-6 * TWO_PI
    assert kelvin_monitor(run).classification == "HKT-Respected"


def test_halts_on_the_nodal_line(ho):
    t0 = ho.time_of(1.45)
    c = Contour.circle((0.2, 0.0), 1.0, n=128)
    run = advect_contour(c, VelocityProbe(), ho, t0, ho.time_of(math.pi / 2), n_outputs=4)
    assert run.outcome.kind == "SingularityEncountered"
    assert ho.E * run.outcome.t == pytest.approx(math.pi / 2, abs=1e-3)
    x, y = run.outcome.point
    assert abs(x + y) / math.sqrt(2) < 1e-2
    report = kelvin_monitor(run, psi=ho, restart_time=ho.time_of(math.pi / 2 + 0.01))
    assert report.classification == "HKT-Assumption-Broken"
    assert (report.pre_winding, report.post_winding) == (1, -1)


def test_cadence_independence(ho):
    c = Contour.circle((0.5, 0.0), 1.0, n=64)
    t1 = ho.time_of(0.4)
    coarse = label_positions(advect_contour(c, VelocityProbe(), ho, 0.0, t1, n_outputs=2).final_contour)
    fine = label_positions(advect_contour(c, VelocityProbe(), ho, 0.0, t1, n_outputs=16).final_contour)
    for lab in c.labels:
        np.testing.assert_allclose(coarse[float(lab)], fine[float(lab)], atol=1e-7)


def test_trajectories_are_recorded(ho):
    c = Contour.circle((0.5, 0.0), 1.0, n=32)
    run = advect_contour(c, VelocityProbe(), ho, 0.0, 0.1, n_outputs=3, track_labels=[0.0])
    assert list(run.trajectories) == [0.0]
    assert len(run.trajectories[0.0]) == 4


def test_invalid_initial_contours(ho):
    through_node = Contour.circle((1.0, 0.0), 1.0, n=64)
    with pytest.raises(InvalidInitialContour):
        advect_contour(through_node, VelocityProbe(), ho, 0.0, 0.1)
    outside = Contour.circle((0.0, 0.0), 1.0, n=64)
    with pytest.raises(InvalidInitialContour):
        advect_contour(outside, VelocityProbe(), ho, 0.0, 0.1, AdvectionOptions(domain=(-0.5, 0.5, -0.5, 0.5)))


def test_output_times_validated(ho):
    c = Contour.circle((0.5, 0.0), 1.0, n=32)
    with pytest.raises(ValueError):
        advect_contour(c, VelocityProbe(), ho, 0.0, 1.0, output_times=[0.0, 0.5, 0.4])


def test_escape_through_domain():
    drift = FunctionField(lambda x, t: np.exp(1j * x[:, 0]) * (1 + 0j), dim=2)
    c = Contour.circle((0.0, 0.0), 0.2, n=32)
    run = advect_contour(c, VelocityProbe(), drift, 0.0, 5.0, AdvectionOptions(domain=(-1, 1, -1, 1)),
                         n_outputs=5)
    assert run.outcome.kind == "Escaped"


def test_min_node_distance(ho):
    c = Contour.circle((0.0, 0.0), 0.7, n=64)
    assert min_node_distance(c, ho, 0.0) == pytest.approx(0.7, abs=0.02)


def test_plane_wave_translates_rigidly():
    c = Contour.circle((0.0, 0.0), 1.0, n=64)
    run = advect_contour(c, VelocityProbe(), PlaneWave((0.5, -0.25)), 0.0, 2.0, n_outputs=4)
    assert run.outcome.kind == "Completed"
    end = label_positions(run.final_contour)
    for lab, p in label_positions(c).items():
        np.testing.assert_allclose(end[lab], p + [1.0, -0.5], atol=1e-9)
    assert all(r.winding == 0 and abs(r.circulation) < 1e-9 for r in run.records)
    assert min_node_distance(c, PlaneWave(), 0.0) == math.inf


def test_ring_threading_contour_breaks_at_annihilation():
    s = RingScenario(k=1.0)
    c = Contour.circle((1.0, 0.0, 0.0), 0.3, n=64, normal=(0, -1, 0))
    run = advect_contour(c, VelocityProbe(), s, 0.0, 1.0, n_outputs=10)
    assert set(r.winding for r in run.records) == {1}
    assert run.outcome.kind == "SingularityEncountered"
    assert run.outcome.t == pytest.approx(1.0, abs=0.1)
    assert kelvin_monitor(run).classification == "HKT-Assumption-Broken"
