from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qvortex.errors import NearNode
from qvortex.fields import (
    FunctionField,
    GaussianState,
    PhaseRotated,
    PlaneWave,
    VelocityProbe,
    continuity_residual,
    density,
    discrete_curl_2d,
    madelung_velocity,
    quantum_potential,
    velocity_and_mask,
)
from qvortex.scenarios import HoTrapScenario, RabiScenario, RingScenario

ANALYTIC = VelocityProbe(source="analytic")


def test_plane_wave_velocity_is_k():
    pw = PlaneWave((0.7, -1.3))
    v = madelung_velocity(pw, [[0.1, 0.2], [3.0, -4.0]], t=0.4)
    np.testing.assert_allclose(v, [[0.7, -1.3]] * 2, atol=1e-12)


def test_gaussian_quantum_potential_at_origin():
    # exp(-r^2/2) in 2D: Q = 1 - r^2/2
    g = GaussianState((0.0, 0.0))
    assert quantum_potential(g, [0.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    assert quantum_potential(g, [1.0, 0.5]) == pytest.approx(1.0 - 0.625, abs=1e-10)


def test_function_field_finite_difference_velocity():
    f = FunctionField(lambda x, t: (x[:, 0] + 1j * x[:, 1]) * np.exp(-0.5 * (x**2).sum(axis=1)))
    v = madelung_velocity(f, [1.0, 1.0])
    np.testing.assert_allclose(v, [-0.5, 0.5], atol=1e-9)


def test_near_node_raises_with_reason(ho):
    with pytest.raises(NearNode) as info:
        madelung_velocity(ho, [0.0, 0.0], 0.0)
    assert info.value.reason == "density"
    fast = VelocityProbe(speed_cap=1.0)
    with pytest.raises(NearNode) as info:
        madelung_velocity(ho, [1e-3, 0.0], 0.0, fast)
    assert info.value.reason == "speed"


def test_velocity_and_mask_does_not_raise(ho):
    v, bad = velocity_and_mask(ho, np.array([[0.0, 0.0], [1.0, 0.0]]), 0.0)
    assert bad.tolist() == [True, False]
    np.testing.assert_allclose(v[0], 0.0)


def test_scenario_gradients_match_finite_differences(rng):
    cases = [
        (HoTrapScenario(), rng.uniform(-2, 2, (30, 2)), 0.7),
        (RingScenario(k=0.8), rng.uniform(-1.5, 1.5, (30, 3)), 0.3),
        (RabiScenario(), rng.uniform(-3, 3, (30, 2)), 4.0),
    ]
    for s, x, t in cases:
        h = 1e-6
        fd = np.stack(
            [(s.evaluate(x + h * e, t) - s.evaluate(x - h * e, t)) / (2 * h) for e in np.eye(s.dim)], axis=1
        )
        np.testing.assert_allclose(s.gradient(x, t), fd, rtol=1e-6, atol=1e-7)


def test_analytic_and_madelung_velocity_agree(ho, rng):
    x = rng.uniform(-3, 3, (200, 2))
    for Et in (0.3, 1.2, 2.0):
        t = ho.time_of(Et)
        a = madelung_velocity(ho, x, t, ANALYTIC)
        b = madelung_velocity(ho, x, t)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_continuity_residual_small(ho, rng):
    x = rng.uniform(-2, 2, (20, 2))
    assert continuity_residual(ho, x, 0.9).max() < 1e-6
    ring = RingScenario(k=1.0)
    y = rng.uniform(-1, 1, (20, 3))
    assert continuity_residual(ring, y, 0.2).max() < 1e-6


def test_density_nonnegative(ho, rng):
    assert (density(ho, rng.uniform(-4, 4, (100, 2)), 1.0) >= 0).all()


coords = st.floats(-2.5, 2.5, allow_nan=False)


@given(theta=st.floats(-10, 10), x=coords, y=coords, Et=st.floats(0.0, 3.0))
def test_gauge_invariance(theta, x, y, Et):
    s = HoTrapScenario()
    t = s.time_of(Et)
    p = np.array([x, y])
    if density(s, p, t) < 1e-6:
        return
    rotated = PhaseRotated(s, theta)
    np.testing.assert_allclose(madelung_velocity(rotated, p, t), madelung_velocity(s, p, t), rtol=1e-9, atol=1e-9)
    assert density(rotated, p, t) == pytest.approx(density(s, p, t), rel=1e-12)


@given(x=coords, y=coords, Et=st.floats(0.0, 3.0))
def test_gradient_consistency(x, y, Et):
    s = HoTrapScenario()
    t = s.time_of(Et)
    p = np.array([[x, y]])
    h = 1e-6
    fd = np.array([(s.evaluate(p + h * e, t) - s.evaluate(p - h * e, t))[0] / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(s.gradient(p, t)[0], fd, rtol=1e-6, atol=1e-7)


@given(x=coords, y=coords, Et=st.floats(0.0, 3.0))
def test_curl_free_away_from_nodes(x, y, Et):
    s = HoTrapScenario()
    t = s.time_of(Et)
    p = np.array([x, y])
    if s.nodal_distance_to(p[None], t)[0] < 0.2 or density(s, p, t) < 1e-4:
        return
    assert abs(discrete_curl_2d(s, p, t, h=1e-4)) < 1e-4


def test_probe_validation():
    with pytest.raises(ValueError):
        VelocityProbe(source="magic")
    with pytest.raises(ValueError):
        VelocityProbe(node_floor=-1)


def test_points_must_be_finite(ho):
    with pytest.raises(ValueError):
        ho.evaluate([math.nan, 0.0])
    with pytest.raises(ValueError):
        ho.evaluate([1.0, 2.0, 3.0])
