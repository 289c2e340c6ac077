"""Motion models, measurement functions, and their Jacobians."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difnet.statespace import (
    GaussianBelief,
    MotionModel,
    SensorMeasurementModel,
    SingularGeometryError,
    ct_transition,
    cv_transition,
    measure,
    measurement_jacobian,
    process_noise_cov,
)


def central_difference_jacobian(fun, x, step=1e-6):
    """Independent finite-difference oracle for measurement Jacobians."""
    n = len(fun(x))
    out = np.zeros((n, len(x)))
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        out[:, i] = (fun(xp) - fun(xm)) / (2 * step)
    return out


class TestTransitions:
    def test_cv_position_plus_velocity(self):
        out = cv_transition(np.array([0.0, 100, 0, 100, 0, 100]), dt=1.0)
        np.testing.assert_allclose(out, [100, 100, 100, 100, 100, 100])

    def test_cv_zero_vector(self):
        np.testing.assert_allclose(cv_transition(np.zeros(6), dt=1.0), np.zeros(6))

    def test_cv_half_second(self):
        out = cv_transition(np.array([1.0, 2, 3, 4, 5, 6]), dt=0.5)
        np.testing.assert_allclose(out, [2, 2, 5, 4, 8, 6])

    def test_ct_small_omega_limit_matches_cv(self):
        # The turn transition approaches CV at first order in omega: the
        # velocity rows carry sin(w*T) ~ w terms, so |F(w) - F_cv| * |v| is
        # O(w * |v|), not smaller.  Check the first-order envelope over the
        # stated state range, and the tight tolerance where it truly holds.
        rng = np.random.default_rng(0)
        for _ in range(40):
            state = rng.uniform(-1e3, 1e3, size=6)
            omega = rng.uniform(-1e-5, 1e-5)
            diff = ct_transition(state, omega, 1.0) - cv_transition(state, 1.0)
            assert np.max(np.abs(diff)) <= 2.1e3 * abs(omega) + 1e-12
        for _ in range(20):
            state = rng.uniform(-1e3, 1e3, size=6)
            omega = rng.uniform(-4e-10, 4e-10)
            diff = ct_transition(state, omega, 1.0) - cv_transition(state, 1.0)
            assert np.max(np.abs(diff)) < 1e-6

    def test_ct_below_switch_equals_cv_exactly(self):
        state = np.array([1.0, 2, 3, 4, 5, 6])
        np.testing.assert_array_equal(
            ct_transition(state, 1e-9, 1.0), cv_transition(state, 1.0)
        )

    def test_ct_turn_couples_velocities(self):
        # Independent evaluation of the turn transition matrix.
        w, dt = 0.05, 1.0
        sw, cw = np.sin(w * dt), np.cos(w * dt)
        f = np.array(
            [
                [1, sw / w, 0, -(1 - cw) / w, 0, 0],
                [0, cw, 0, -sw, 0, 0],
                [0, (1 - cw) / w, 1, sw / w, 0, 0],
                [0, sw, 0, cw, 0, 0],
                [0, 0, 0, 0, 1, dt],
                [0, 0, 0, 0, 0, 1],
            ]
        )
        state = np.array([0.0, 100, 0, 100, 0, 100])
        expected = f @ state
        np.testing.assert_allclose(ct_transition(state, w, dt), expected, rtol=1e-12)
        # Frozen oracle values (first component carries the -(1-cos)/w * ydot
        # term, so it is *not* 100*sin(w)/w alone).
        np.testing.assert_allclose(
            expected,
            [97.45885933128923, 94.8771091124288, 102.4578177514241,
             104.87294296656447, 100.0, 100.0],
            rtol=1e-12,
        )

    def test_ct_zero_velocity_keeps_position(self):
        state = np.array([3.0, 0, -7, 0, 11, 0])
        out = ct_transition(state, omega=0.3, dt=1.0)
        np.testing.assert_allclose(out[[0, 2, 4]], state[[0, 2, 4]])

    @given(
        a=st.floats(-5, 5),
        b=st.floats(-5, 5),
        omega=st.floats(-0.5, 0.5),
    )
    @settings(max_examples=50, deadline=None)
    def test_transitions_are_linear(self, a, b, omega):
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=6), rng.normal(size=6)
        for fun in (
            lambda s: cv_transition(s, 0.7),
            lambda s: ct_transition(s, omega, 0.7),
        ):
            lhs = fun(a * x + b * y)
            rhs = a * fun(x) + b * fun(y)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


class TestProcessNoise:
    def test_cv_block(self):
        q = process_noise_cov(MotionModel("constant-velocity", dt=1.0, q=1.0))
        np.testing.assert_allclose(q[:2, :2], [[1 / 3, 1 / 2], [1 / 2, 1]])
        assert q.shape == (6, 6)

    def test_cv_zero_q(self):
        q = process_noise_cov(MotionModel("constant-velocity", dt=1.0, q=0.0))
        np.testing.assert_allclose(q, np.zeros((6, 6)))

    def test_ct_entry(self):
        q = process_noise_cov(
            MotionModel("coordinated-turn", dt=1.0, q=1.0, omega=0.05)
        )
        np.testing.assert_allclose(q[0, 0], 0.3332916691467513, rtol=1e-12)

    @pytest.mark.parametrize("kind,omega", [("constant-velocity", 0.0),
                                            ("coordinated-turn", 0.05),
                                            ("coordinated-turn", -0.4)])
    def test_symmetric_psd(self, kind, omega):
        rng = np.random.default_rng(1)
        for _ in range(25):
            model = MotionModel(kind, dt=rng.uniform(0.1, 3.0),
                                q=rng.uniform(0, 4.0), omega=omega)
            q = process_noise_cov(model)
            np.testing.assert_allclose(q, q.T, atol=1e-12)
            assert np.linalg.eigvalsh(q).min() >= -1e-12 * max(np.trace(q), 1.0)


def _selector_sensor():
    sel = np.hstack([np.zeros((2, 4)), np.eye(2)])
    return SensorMeasurementModel(
        4, "linear-selector", np.diag([1e4, 1e2]), selector=sel
    )


def _azimuth_sensor(position=(-5000.0, 0.0, 0.0)):
    return SensorMeasurementModel(
        1, "azimuth-speed", np.diag([(np.pi / 180) ** 2, 225.0]),
        position=np.asarray(position),
    )


def _range_sensor(position=(500.0, 300.0, 0.0)):
    return SensorMeasurementModel(
        2, "range-speed", np.diag([62500.0, 625.0]), position=np.asarray(position)
    )


class TestMeasure:
    def test_selector_rows(self):
        out = measure(_selector_sensor(), np.array([1.0, 2, 3, 4, 5, 6]))
        np.testing.assert_allclose(out, [5, 6])

    def test_azimuth_zero_when_same_y(self):
        state = np.array([0.0, 70, 0.0, 70, 0, 0])
        out = measure(_azimuth_sensor(), state)
        assert out[0] == 0.0

    def test_range_speed_values(self):
        state = np.array([500.0, 3, 400.0, 4, 0, 0])
        np.testing.assert_allclose(measure(_range_sensor(), state), [100.0, 5.0])

    def test_coincident_target_rejected(self):
        state = np.array([500.0, 3, 300.0, 4, 0, 0])
        with pytest.raises(SingularGeometryError):
            measure(_range_sensor(), state)
        with pytest.raises(SingularGeometryError):
            measurement_jacobian(_range_sensor(), state)


class TestJacobians:
    def test_selector_jacobian_is_selector(self):
        sensor = _selector_sensor()
        jac = measurement_jacobian(sensor, np.arange(6.0))
        np.testing.assert_allclose(jac, sensor.selector)

    def test_azimuth_partial(self):
        sensor = _azimuth_sensor()
        state = np.array([0.0, 50, 1000.0, 50, 0, 0])
        dx, dy = state[0] - (-5000.0), state[2] - 0.0
        jac = measurement_jacobian(sensor, state)
        np.testing.assert_allclose(jac[0, 0], -dy / (dx**2 + dy**2), rtol=1e-12)

    def test_speed_row(self):
        state = np.array([0.0, 3, 1000.0, 4, 7, 9])
        jac = measurement_jacobian(_azimuth_sensor(), state)
        np.testing.assert_allclose(jac[1], [0, 0.6, 0, 0.8, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("factory", [_azimuth_sensor, _range_sensor])
    def test_matches_finite_differences(self, factory):
        sensor = factory()
        rng = np.random.default_rng(2)
        for _ in range(100):
            state = rng.uniform(-1, 1, size=6) * np.array(
                [2000, 80, 2000, 80, 2000, 80]
            ) + np.array([3000, 40, 3000, 40, 0, 0])
            jac = measurement_jacobian(sensor, state)
            ref = central_difference_jacobian(lambda s: measure(sensor, s), state)
            np.testing.assert_allclose(jac, ref, rtol=1e-5, atol=1e-8)


class TestGaussianBelief:
    def test_validate_accepts_psd(self):
        GaussianBelief(np.zeros(3), np.eye(3)).validate()

    def test_validate_rejects_asymmetric(self):
        cov = np.eye(3)
        cov[0, 1] = 0.5
        with pytest.raises(ValueError):
            GaussianBelief(np.zeros(3), cov).validate()

    def test_validate_rejects_indefinite(self):
        with pytest.raises(ValueError):
            GaussianBelief(np.zeros(2), np.diag([1.0, -1.0])).validate()
