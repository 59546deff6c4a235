from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from qvortex.errors import OnNodalLine
from qvortex.scenarios import (
    HoTrapScenario,
    RabiScenario,
    RingScenario,
    RingSlice,
    ho_velocity,
    ho_wavefunction,
    rabi_offcenter_vortex_position,
    rabi_offcenter_vortex_radius,
    rabi_wavefunction,
    ring_nodal_circle,
    ring_wavefunction,
)


class TestHoTrap:
    def test_energies(self, ho):
        assert ho.E == pytest.approx(math.sqrt(2) - 1)
        assert ho.Ey - ho.Ex == pytest.approx(ho.E)

    def test_velocity_examples(self, ho):
        np.testing.assert_allclose(ho_velocity(ho, [1.0, 0.0], 0.0), [0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(ho_velocity(ho, [0.0, 1.0], 0.0), [-1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(ho_velocity(ho, [1.0, 1.0], ho.time_of(math.pi)), [0.5, -0.5], atol=1e-12)

    def test_on_nodal_line(self, ho):
        t = ho.time_of(math.pi / 2)
        with pytest.raises(OnNodalLine):
            ho_velocity(ho, [0.7, -0.7], t)
        assert abs(ho_wavefunction(ho, [0.7, -0.7], t)) < 1e-15

    def test_degenerate_lambda(self):
        with pytest.raises(ValueError):
            HoTrapScenario(lam=1.0)
        with pytest.raises(ValueError):
            HoTrapScenario(alpha=0.0)

    def test_solves_schroedinger(self, ho, rng):
        # i dpsi/dt = -lap/2 psi + V psi
        x = rng.uniform(-2, 2, (40, 2))
        t, h = 0.8, 1e-5
        dpsi = (ho.evaluate(x, t + h) - ho.evaluate(x, t - h)) / (2 * h)
        lap = ho._lap(x, t)
        V = ho.potential(x[:, 0], x[:, 1])
        np.testing.assert_allclose(1j * dpsi, -0.5 * lap + V * ho.evaluate(x, t), atol=1e-8)

    def test_nodal_distance(self, ho):
        assert ho.nodal_distance_to([[3.0, 4.0]], 0.0)[0] == pytest.approx(5.0)
        t = ho.time_of(math.pi / 2)
        assert ho.nodal_distance_to([[1.0, 1.0]], t)[0] == pytest.approx(math.sqrt(2))


class TestRing:
    def test_nodal_circle(self):
        s = RingScenario(k=1.0)
        for t in (0.0, 0.5, 0.8, 0.99):
            center, radius, normal = ring_nodal_circle(s, t)
            assert radius == pytest.approx(math.sqrt(1 - t * t))
            np.testing.assert_allclose(center, [t, 0.0, -t])
            ang = np.linspace(0, 2 * np.pi, 17)
            pts = center + radius * np.stack([np.cos(ang), np.sin(ang), 0 * ang], axis=1)
            assert np.abs(ring_wavefunction(s, pts, t)).max() < 1e-12
        assert ring_nodal_circle(s, 1.5) is None

    def test_solves_free_schroedinger(self, rng):
        s = RingScenario(k=0.7)
        x = rng.uniform(-1, 1, (30, 3))
        t, h = 0.3, 1e-5
        dpsi = (s.evaluate(x, t + h) - s.evaluate(x, t - h)) / (2 * h)
        np.testing.assert_allclose(1j * dpsi, -0.5 * s._lap(x, t), atol=1e-8)

    def test_slice_embedding(self):
        s = RingScenario()
        sl = RingSlice(s, 0.25)
        q = np.array([[0.3, -0.4]])
        np.testing.assert_allclose(sl.embed(q), [[0.3, 0.25, -0.4]])
        assert sl.evaluate(q, 0.1)[0] == s.evaluate(sl.embed(q), 0.1)[0]


class TestRabi:
    def test_radius_matches_independent_root(self):
        s = RabiScenario()
        r = rabi_offcenter_vortex_radius(s, s.time_of(math.pi / 4))
        oracle = brentq(lambda x: x * math.exp(4 * x / 15) - 1.0, 0.0, 5.0, xtol=1e-15)
        assert r == pytest.approx(oracle, abs=1e-12)
        assert r == pytest.approx(0.80649, abs=1e-5)

    def test_radius_limits(self):
        s = RabiScenario()
        assert rabi_offcenter_vortex_radius(s, 0.0) is None
        assert rabi_offcenter_vortex_radius(s, s.time_of(math.pi)) is None
        assert rabi_offcenter_vortex_radius(s, s.time_of(math.pi / 2)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("Dt", [0.3, math.pi / 4, 1.2, 2.0, 2.8])
    def test_moving_node_is_a_zero(self, Dt):
        s = RabiScenario()
        t = s.time_of(Dt)
        p = rabi_offcenter_vortex_position(s, t)
        scale = np.abs(rabi_wavefunction(s, p + np.array([[0.05, 0.0]]), t))[0]
        assert abs(rabi_wavefunction(s, p, t)) < 1e-12 * max(1.0, scale)
        assert len(s.nodes(t)) == 2

    def test_invalid_coupling(self):
        with pytest.raises(ValueError):
            RabiScenario(D=0.0)
