import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socbal.errors import ForbiddenReference, MissingReference, TimeBeforeStart
from socbal.observers import (
    GainSchedule,
    PowerObserverParams,
    StateObserverParams,
    default_power_omega_cap,
    default_state_omega_cap,
    omega,
    power_consensus_signal,
    power_consensus_vector,
    power_observer_derivative,
    sgn,
    sgn_vector,
    state_consensus_signal,
    state_estimates,
    state_observer_q_derivative,
)
from socbal.topology import build_topology, h_matrix, laplacian, ring_edges

finite = st.floats(-1e7, 1e7)


@pytest.fixture
def schedule():
    return GainSchedule(t0=0.0, tb=4.0, psi=4.0, r=50.0)


@pytest.fixture
def ring6():
    return build_topology(6, ring_edges(6), [1, 0, 0, 0, 0, 0])


class TestOmega:
    def test_values(self, schedule):
        assert omega(0.0, schedule) == 1.0
        assert omega(2.0, schedule) == 2.0
        assert omega(3.0, schedule) == 4.0
        assert omega(4.0, schedule) == 1.0
        assert omega(10.0, schedule) == 1.0

    def test_clamped(self):
        g = GainSchedule(0.0, 4.0, 4.0, 50.0, omega_cap=10.0)
        assert omega(3.999999, g) == 10.0

    def test_before_start(self, schedule):
        with pytest.raises(TimeBeforeStart):
            omega(-0.1, schedule)

    @pytest.mark.parametrize("kw", [dict(tb=0.0), dict(psi=0.0), dict(r=-1.0), dict(omega_cap=0.5)])
    def test_schedule_validation(self, kw):
        args = dict(t0=0.0, tb=4.0, psi=4.0, r=50.0) | kw
        with pytest.raises(ValueError):
            GainSchedule(**args)

    def test_default_caps(self, schedule):
        # 4 / (200 * 1e-4 * lambda_max) for the pinned ring
        lam_h = 4.278413609
        assert default_power_omega_cap(schedule, 1e-4, lam_h) == pytest.approx(4 / (200 * 1e-4 * lam_h), rel=1e-9)
        assert default_state_omega_cap(schedule, 1e-4, 4.0) == pytest.approx(12.5, rel=1e-12)
        assert default_state_omega_cap(schedule, 1e-4, 0.0) == math.inf
        assert default_power_omega_cap(schedule, 1.0, lam_h) == 1.0


class TestSign:
    def test_zero_is_zero(self):
        assert sgn(0.0) == 0.0
        assert sgn_vector(np.array([0.0])).tolist() == [0.0]

    def test_layer(self):
        assert sgn(0.5, 1.0) == 0.5
        assert sgn(-3.0, 1.0) == -1.0
        assert sgn(2.0, None) == 1.0

    @given(finite, st.floats(1e-9, 1e3))
    def test_vector_matches_scalar(self, x, delta):
        assert sgn_vector(np.array([x]), delta)[0] == sgn(x, delta)
        assert sgn_vector(np.array([x]))[0] == sgn(x)


class TestPowerObserver:
    def test_reference_access_guard(self, ring6):
        p = np.zeros(6)
        with pytest.raises(MissingReference):
            power_consensus_signal(0, p, ring6)
        with pytest.raises(ForbiddenReference):
            power_consensus_signal(1, p, ring6, p_a_local=1.0)

    @given(st.lists(finite, min_size=6, max_size=6), finite)
    def test_vector_matches_per_node(self, p, p_a):
        t = build_topology(6, ring_edges(6), [1, 0, 0, 0, 0, 0])
        p = np.array(p)
        vec = power_consensus_vector(p, h_matrix(t).astype(float), t.pinning.astype(float), p_a)
        for i in range(6):
            local = power_consensus_signal(i, p, t, p_a if t.access_flags[i] else None)
            assert vec[i] == pytest.approx(local, rel=1e-9, abs=1e-6)

    def test_equilibrium(self, schedule):
        params = PowerObserverParams(alpha=1000.0, schedule=schedule)
        assert power_observer_derivative(0, 0.0, 1.0, params) == 0.0

    def test_derivative_value(self, schedule):
        params = PowerObserverParams(alpha=1000.0, schedule=schedule)
        # -alpha * sgn(2) - (200 / 4) * omega(2) * 2 = -1000 - 50 * 2 * 2
        assert power_observer_derivative(0, 2.0, 2.0, params) == pytest.approx(-1200.0)

    def test_negative_alpha(self, schedule):
        with pytest.raises(ValueError):
            PowerObserverParams(alpha=-1.0, schedule=schedule)

    def test_scalar_convergence_before_deadline(self, schedule):
        # one pinned node: v = p_hat - p_a, Euler integration with a clamped gain
        params = PowerObserverParams(alpha=10.0, schedule=GainSchedule(0.0, 4.0, 4.0, 50.0, omega_cap=20.0), sign_layer=1e-6)
        p_hat, p_a, h = -3000.0, 700.0, 1e-4
        for k in range(40000):
            p_hat += h * power_observer_derivative(0, p_hat - p_a, k * h, params)
        assert abs(p_hat - p_a) < 1e-3


class TestStateObserver:
    def test_consensus_signal(self, ring6):
        x_hat = np.arange(6, dtype=float)
        # node 0 neighbours are 1 and 5
        assert state_consensus_signal(0, x_hat, ring6) == (0 - 1) + (0 - 5)

    def test_shape_check(self, ring6):
        with pytest.raises(ValueError):
            state_estimates(np.zeros(5), np.zeros(6), ring6)

    def test_zero_q_gives_true_states(self, ring6):
        x = np.linspace(1.0, 2.0, 6)
        assert np.array_equal(state_estimates(np.zeros(6), x, ring6), x)

    @given(st.lists(finite, min_size=6, max_size=6), st.lists(st.floats(1e3, 1e8), min_size=6, max_size=6))
    def test_sum_identity(self, q, x):
        t = build_topology(6, ring_edges(6), [1, 0, 0, 0, 0, 0])
        x_hat = state_estimates(q, x, t)
        assert abs(x_hat.sum() - sum(x)) <= 1e-9 * sum(x) + 1e-9 * np.abs(laplacian(t) @ np.array(q)).sum()

    def test_q_derivative(self, schedule):
        params = StateObserverParams(beta=3430.0, schedule=schedule)
        assert state_observer_q_derivative(0, -1.0, 0.0, params) == pytest.approx(3430.0 + 50.0)
