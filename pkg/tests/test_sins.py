import numpy as np
import pytest
from numpy.testing import assert_allclose

from navfuse.errors import FilterError
from navfuse.geodesy import FlatEarthModel, Wgs84Model
from navfuse.quat import att_to_quat, heading_of, quat_to_dcm
from navfuse.sins import (ImuSample, NavState, apply_correction,
                          invert_mechanize, mechanize)
from oracles import rk4

LAT = np.deg2rad(31.8)
LON = np.deg2rad(116.35)


def static_state(lat=LAT, lon=LON, heading=0.3):
    return NavState(np.array([lon, lat, 25.0]), np.zeros(3),
                    att_to_quat(heading, 0.05, -0.02))


def static_sample(state, earth, t):
    ep = earth.params(state.r, state.v)
    C_nb = quat_to_dcm(state.q).T
    return ImuSample(t, C_nb @ ep.omega_ie_n, C_nb @ (-ep.g_n))


def test_static_equilibrium_position_drift():
    earth = Wgs84Model()
    state = static_state()
    r0 = state.r.copy()
    dt = 0.005
    for k in range(2000):   # 10 s
        state = mechanize(state, static_sample(state, earth, (k + 1) * dt),
                          dt, earth)
    r_n, r_m = 6.4e6, 6.4e6
    drift_m = np.array([(state.r[0] - r0[0]) * r_n * np.cos(LAT),
                        (state.r[1] - r0[1]) * r_m,
                        state.r[2] - r0[2]])
    assert np.linalg.norm(drift_m) < 1e-6


def test_constant_acceleration_flat_earth():
    earth = FlatEarthModel()
    state = NavState(np.zeros(3), np.zeros(3), att_to_quat(0.0))
    dt = 0.01
    f_body = np.array([1.0, 0.0, earth.gravity])
    for k in range(200):   # 2 s
        state = mechanize(state, ImuSample((k + 1) * dt, np.zeros(3), f_body),
                          dt, earth)
    assert_allclose(state.v, [2.0, 0.0, 0.0], atol=1e-9)
    assert_allclose(state.r[0], 2.0, atol=1e-6)
    assert_allclose(state.r[1:], [0.0, 0.0], atol=1e-9)


def test_circular_motion_matches_fine_rk4():
    # constant body turn rate and centripetal specific force on flat earth
    earth = FlatEarthModel()
    speed = 8.0
    turn_rate = 0.25                  # heading rate, clockwise from north
    radius = speed / turn_rate
    # right turn: centripetal force along body right, yaw rate about -up
    f_body = np.array([turn_rate * speed, 0.0, earth.gravity])
    omega_body = np.array([0.0, 0.0, -turn_rate])

    state = NavState(np.zeros(3), np.array([0.0, speed, 0.0]), att_to_quat(0.0))
    dt = 0.01
    for k in range(1000):   # 10 s
        state = mechanize(state, ImuSample((k + 1) * dt, omega_body, f_body),
                          dt, earth)

    def ode(t, x):
        # x = [px, py, heading, vx, vy]; ccw body yaw lowers the heading
        C = quat_to_dcm(att_to_quat(x[2]))
        a = C @ f_body + np.array([0.0, 0.0, -earth.gravity])
        return np.array([x[3], x[4], turn_rate, a[0], a[1]])

    x_ref = rk4(ode, [0.0, 0.0, 0.0, 0.0, speed], 0.0, 10.0, 100000)
    assert_allclose(state.r[0:2], x_ref[0:2], atol=1e-4)
    assert_allclose(state.v[0:2], x_ref[3:5], atol=1e-4)
    # sanity: the motion stayed on the circle around the point to the right
    center = np.array([radius, 0.0])
    assert np.hypot(*(state.r[0:2] - center)) == pytest.approx(radius, abs=2e-3)


def test_richardson_order_of_accuracy():
    # halving dt should shrink the error by ~4x on a smooth trajectory
    earth = Wgs84Model()
    omega_body = np.array([0.01, -0.02, 0.15])
    f_body = np.array([0.4, 1.2, 9.81])

    def integrate(dt, steps):
        state = NavState(np.array([LON, LAT, 40.0]),
                         np.array([3.0, 4.0, 0.1]), att_to_quat(0.7, 0.02, 0.01))
        for k in range(steps):
            state = mechanize(state, ImuSample((k + 1) * dt, omega_body, f_body),
                              dt, earth)
        return state

    ref = integrate(0.0005, 8000)    # 4 s at fine step
    coarse = integrate(0.04, 100)
    fine = integrate(0.02, 200)

    def err(s):
        jac = earth.meters_jacobian(ref.r)
        return np.linalg.norm((s.r - ref.r) * jac)

    order = np.log2(err(coarse) / err(fine))
    assert order >= 1.9


def test_mechanize_rejects_bad_input():
    earth = Wgs84Model()
    state = static_state()
    with pytest.raises(FilterError):
        mechanize(state, ImuSample(0.01, np.full(3, np.nan), np.zeros(3)),
                  0.01, earth)
    with pytest.raises(FilterError):
        mechanize(state, static_sample(state, earth, 1.0), 0.5, earth)


class TestInverseMechanize:
    def test_exact_inverse_single_step(self):
        earth = Wgs84Model()
        rng = np.random.default_rng(8)
        state = NavState(np.array([LON, LAT, 12.0]),
                         np.array([5.0, -2.0, 0.3]),
                         att_to_quat(1.1, -0.04, 0.06))
        dt = 0.005
        omega = rng.normal(0.0, 0.2, 3)
        f = rng.normal(0.0, 2.0, 3) + np.array([0.0, 0.0, 9.8])
        nxt = mechanize(state, ImuSample(dt, omega, f), dt, earth)
        omega2, f2 = invert_mechanize(state, nxt, dt, earth)
        assert_allclose(omega2, omega, atol=1e-11)
        assert_allclose(f2, f, atol=1e-9)

    def test_roundtrip_closure_60s(self):
        # inverse-mechanized stream re-integrates to the truth trajectory
        from navfuse.sim import TrajectorySpec, Scenario, generate_truth, synthesize_imu
        scn = Scenario(seed=5, trajectory=TrajectorySpec(
            kind="waypoints",
            waypoints=[(0.0, 0.0), (150.0, 40.0), (320.0, -30.0), (600.0, 10.0)],
            speed=10.0))
        truth = generate_truth(scn)
        assert truth.t[-1] >= 60.0
        synth = synthesize_imu(truth, scn.imu, scn.seed, noise=False)
        earth = truth.frame.model
        state = truth.nav_state(0)
        worst = 0.0
        jac = earth.meters_jacobian(truth.r[0])
        for k, sample in enumerate(synth.samples):
            state = mechanize(state, sample, truth.dt, earth)
            err = np.linalg.norm((state.r - truth.r[k + 1]) * jac)
            worst = max(worst, err)
        assert worst < 1e-3


class TestApplyCorrection:
    def test_zero_correction_identity(self):
        state = static_state()
        out = apply_correction(state, np.zeros(15))
        assert_allclose(out.r, state.r)
        assert_allclose(out.q, state.q)

    def test_heading_shift_small_angle(self):
        state = NavState(np.array([LON, LAT, 0.0]), np.zeros(3),
                         att_to_quat(0.5))
        dx = np.zeros(15)
        dx[8] = 1e-3
        out = apply_correction(state, dx)
        assert heading_of(out.q) - heading_of(state.q) == pytest.approx(-1e-3,
                                                                        abs=1e-9)

    def test_roundtrip_second_order(self):
        rng = np.random.default_rng(9)
        state = static_state()
        dx = rng.normal(0.0, 1e-3, 15)
        back = apply_correction(apply_correction(state, dx), -dx)
        assert_allclose(back.r, state.r, atol=1e-12)
        assert_allclose(back.v, state.v, atol=1e-12)
        assert_allclose(back.q, state.q, atol=np.linalg.norm(dx) ** 2)

    def test_large_attitude_correction_rejected(self):
        state = static_state()
        dx = np.zeros(15)
        dx[6] = 0.2
        with pytest.raises(FilterError):
            apply_correction(state, dx)

    def test_quaternion_stays_normalized(self):
        rng = np.random.default_rng(10)
        state = static_state()
        for _ in range(100):
            dx = rng.normal(0.0, 3e-3, 15)
            state = apply_correction(state, dx)
            assert abs(np.linalg.norm(state.q) - 1.0) < 1e-12
