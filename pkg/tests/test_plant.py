import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bompc.errors import DimensionMismatch, NonFiniteState
from bompc.plant import (
    CABLE_DIRECTIONS,
    LinearPlant,
    PlantSim,
    PlantState,
    SoftRodPlant,
    cable_force,
    cable_matrix,
    linearize,
    plant_output,
    plant_step,
)

DT = 0.05


def _oscillator_step(q, v, force, m, c, k, t):
    """Closed-form response of ``m q'' + c q' + k q = force`` (underdamped) after ``t``."""
    sigma = c / (2.0 * m)
    wd = math.sqrt(k / m - sigma * sigma)
    qs = force / k
    c1 = q - qs
    c2 = (v + sigma * c1) / wd
    e = math.exp(-sigma * t)
    cos, sin = math.cos(wd * t), math.sin(wd * t)
    q_next = qs + e * (c1 * cos + c2 * sin)
    v_next = e * ((-sigma * c1 + wd * c2) * cos + (-sigma * c2 - wd * c1) * sin)
    return q_next, v_next


class TestGeometry:
    def test_unit_directions_at_120_degrees(self):
        np.testing.assert_allclose(np.linalg.norm(CABLE_DIRECTIONS, axis=0), 1.0, atol=1e-15)
        angles = np.degrees(np.arctan2(CABLE_DIRECTIONS[1], CABLE_DIRECTIONS[0])) % 360
        np.testing.assert_allclose(angles, [0.0, 120.0, 240.0], atol=1e-12)

    def test_lever_scales_columns(self):
        p = SoftRodPlant(lever=3.0)
        np.testing.assert_allclose(np.linalg.norm(p.cable_matrix, axis=0), 3.0)

    def test_cable_force_matches_matrix(self):
        u = np.array([0.3, -1.2, 2.5])
        np.testing.assert_allclose(cable_force(7.0, u), cable_matrix(7.0) @ u, atol=1e-13)

    def test_default_noise(self):
        assert SoftRodPlant().noise_std == 0.01

    @pytest.mark.parametrize("kw", [{"mass": 0.0}, {"stiffness": -1.0}, {"damping": -0.1}, {"substeps": 0}])
    def test_invalid_parameters(self, kw):
        with pytest.raises(ValueError):
            SoftRodPlant(**kw)


class TestStep:
    def test_rest_is_fixed_point(self):
        s = plant_step(SoftRodPlant(), PlantState.rest(), np.zeros(3), DT)
        np.testing.assert_array_equal(s.as_vector(), np.zeros(4))

    @pytest.mark.parametrize("tension", [0.0, 1.0, -7.5, 10.0])
    def test_equal_tensions_cancel(self, tension):
        s = plant_step(SoftRodPlant(), PlantState.rest(), np.full(3, tension), DT)
        np.testing.assert_array_equal(s.as_vector(), np.zeros(4))

    def test_energy_non_increasing_after_perturbation(self):
        p = SoftRodPlant()
        s = PlantState.at((0.05, 0.0))
        e = p.energy(s)
        for _ in range(100):
            s = plant_step(p, s, np.zeros(3), DT)
            e_next = p.energy(s)
            assert e_next <= e + 1e-9
            e = e_next

    def test_linear_limit_matches_closed_form(self):
        p = SoftRodPlant(cubic_stiffness=0.0)
        rng = np.random.default_rng(0)
        s = PlantState.rest()
        q = np.zeros(2)
        v = np.zeros(2)
        for _ in range(int(1.0 / DT)):
            u = rng.uniform(-0.05, 0.05, 3)
            f = p.cable_matrix @ u
            s = plant_step(p, s, u, DT)
            for i in range(2):
                q[i], v[i] = _oscillator_step(q[i], v[i], f[i], p.mass, p.damping, p.stiffness, DT)
            np.testing.assert_allclose(s.q, q, atol=1e-6)
            np.testing.assert_allclose(s.qdot, v, atol=1e-6)

    def test_linearize_matches_closed_form(self):
        p = SoftRodPlant(cubic_stiffness=0.0)
        a, b, _ = linearize(p, DT)
        x0 = np.array([0.01, -0.02, 0.1, 0.05])
        u = np.array([0.02, -0.01, 0.03])
        f = p.cable_matrix @ u
        x1 = a @ x0 + b @ u
        for i in range(2):
            qi, vi = _oscillator_step(x0[i], x0[2 + i], f[i], p.mass, p.damping, p.stiffness, DT)
            assert x1[i] == pytest.approx(qi, abs=1e-12)
            assert x1[2 + i] == pytest.approx(vi, abs=1e-12)

    def test_bad_input_shape(self):
        with pytest.raises(DimensionMismatch):
            plant_step(SoftRodPlant(), PlantState.rest(), np.zeros(2), DT)

    def test_blowup_raises(self):
        p = SoftRodPlant(damping=0.0, substeps=1)
        with pytest.raises(NonFiniteState):
            s = PlantState.at((1e3, -1e3))
            for _ in range(50):
                s = plant_step(p, s, np.zeros(3), DT)


class TestOutput:
    def test_noiseless_identity(self):
        p = SoftRodPlant(noise_std=0.0)
        y = plant_output(p, PlantState.at((0.03, -0.02)), np.random.default_rng(0))
        np.testing.assert_array_equal(y, [0.03, -0.02])

    def test_noise_moments(self):
        p = SoftRodPlant()
        rng = np.random.default_rng(7)
        ys = np.array([plant_output(p, PlantState.rest(), rng) for _ in range(10_000)])
        assert np.all(np.abs(ys.mean(axis=0)) < 4e-4)
        np.testing.assert_allclose(ys.std(axis=0, ddof=1), 0.01, rtol=0.05)

    def test_sim_reset_reproduces_noise(self):
        sim = PlantSim(SoftRodPlant(), DT, seed=3)
        a = [sim.measure() for _ in range(5)]
        sim.reset(seed=3)
        b = [sim.measure() for _ in range(5)]
        np.testing.assert_array_equal(a, b)


def test_linear_plant_recurrence():
    lp = LinearPlant(np.array([[0.5]]), np.array([[1.0]]), np.array([[2.0]]))
    lp.step([1.0])
    lp.step([0.0])
    assert lp.measure()[0] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(
    q=st.tuples(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1)),
    qdot=st.tuples(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0)),
    damping=st.floats(0.01, 5.0),
)
def test_passivity_property(q, qdot, damping):
    p = SoftRodPlant(damping=damping)
    s = PlantState.at(q, qdot)
    e = p.energy(s)
    for _ in range(20):
        s = plant_step(p, s, np.zeros(3), DT)
        e_next = p.energy(s)
        assert e_next <= e + 1e-9
        e = e_next


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-10.0, 10.0))
def test_symmetry_property(c):
    s = plant_step(SoftRodPlant(), PlantState.rest(), np.full(3, c), DT)
    np.testing.assert_array_equal(s.as_vector(), np.zeros(4))
