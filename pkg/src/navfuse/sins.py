"""Strapdown inertial mechanization in the ENU navigation frame.

The integration scheme per IMU sample is:

* attitude: exact quaternion exponentials, body increment on the right,
  navigation-frame rotation (earth rate + transport rate) on the left
* velocity: specific force rotated with the midpoint attitude, Coriolis
  and gravity evaluated at the start state
* position: trapezoidal velocity through the curvilinear mapping R_c

``invert_mechanize`` is the exact algebraic inverse of one step and is what
the simulator uses to manufacture IMU readings from a truth trajectory.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FilterError
from .geodesy import Wgs84Model
from .quat import (quat_conj, quat_from_rotvec, quat_mul, quat_normalize,
                   quat_to_dcm, quat_to_rotvec)

MAX_CORRECTION_ANGLE = 0.1  # rad; larger attitude corrections signal divergence


@dataclass
class ImuSample:
    """Gyro/accelerometer reading at time t, averaged over the preceding dt."""

    t: float
    omega: np.ndarray  # rad/s, body frame
    f: np.ndarray      # m/s^2 specific force, body frame

    def is_finite(self):
        return np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.f))


@dataclass
class NavState:
    """Position (lon, lat, alt), ENU velocity, attitude and IMU biases."""

    r: np.ndarray
    v: np.ndarray
    q: np.ndarray                      # body -> nav
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def copy(self):
        return NavState(self.r.copy(), self.v.copy(), self.q.copy(),
                        self.ba.copy(), self.bg.copy(), self.t)

    @property
    def dcm(self):
        return quat_to_dcm(self.q)


def mechanize(state, sample, dt, earth=None):
    """Advance the navigation state by one IMU interval of length dt."""
    if earth is None:
        earth = Wgs84Model()
    if not (0.0 < dt <= 0.1):
        raise FilterError(f"mechanization interval out of range: {dt}")
    if not sample.is_finite():
        raise FilterError("non-finite IMU sample")

    ep = earth.params(state.r, state.v)
    omega_b = sample.omega - state.bg
    f_b = sample.f - state.ba

    zeta = (ep.omega_ie_n + ep.omega_en_n) * dt
    theta = omega_b * dt
    q_nav = quat_from_rotvec(-zeta)
    q_body = quat_from_rotvec(theta)
    q_new = quat_normalize(quat_mul(q_nav, quat_mul(state.q, q_body)))

    q_mid = quat_mul(quat_from_rotvec(-0.5 * zeta),
                     quat_mul(state.q, quat_from_rotvec(0.5 * theta)))
    c_mid = quat_to_dcm(q_mid)
    accel = c_mid @ f_b + ep.g_n - np.cross(2.0 * ep.omega_ie_n + ep.omega_en_n, state.v)
    v_new = state.v + accel * dt

    r_new = state.r + ep.R_c @ (0.5 * (state.v + v_new)) * dt

    return NavState(r_new, v_new, q_new, state.ba.copy(), state.bg.copy(), state.t + dt)


def invert_mechanize(state0, state1, dt, earth=None):
    """Solve one mechanization step for the bias-free (omega, f) inputs.

    Returns the body angular rate and specific force such that
    ``mechanize(state0, ImuSample(t, omega + bg, f + ba), dt)`` reproduces the
    attitude and velocity of ``state1`` exactly (and its position, provided
    state1's position followed the trapezoidal rule).
    """
    if earth is None:
        earth = Wgs84Model()
    ep = earth.params(state0.r, state0.v)
    zeta = (ep.omega_ie_n + ep.omega_en_n) * dt

    q_theta = quat_mul(quat_conj(state0.q),
                       quat_mul(quat_from_rotvec(zeta), state1.q))
    theta = quat_to_rotvec(q_theta)
    omega_b = theta / dt

    q_mid = quat_mul(quat_from_rotvec(-0.5 * zeta),
                     quat_mul(state0.q, quat_from_rotvec(0.5 * theta)))
    c_mid = quat_to_dcm(q_mid)
    accel = (state1.v - state0.v) / dt
    f_b = c_mid.T @ (accel - ep.g_n + np.cross(2.0 * ep.omega_ie_n + ep.omega_en_n, state0.v))
    return omega_b, f_b


def apply_correction(state, dx):
    """Feed an estimated 15-vector error state back into the navigation state.

    Layout of dx: position error (lon, lat, alt), ENU velocity error,
    attitude error angle, accel bias error, gyro bias error.  Position,
    velocity and attitude errors are computed-minus-true so they are removed;
    bias errors are remaining-true-minus-estimated so they are added.
    """
    dx = np.asarray(dx, dtype=float)
    psi = dx[6:9]
    angle = np.linalg.norm(psi)
    if angle >= MAX_CORRECTION_ANGLE:
        raise FilterError(f"correction too large: |dpsi| = {angle:.3f} rad")
    q_new = quat_normalize(quat_mul(quat_from_rotvec(psi), state.q))
    return NavState(
        state.r - dx[0:3],
        state.v - dx[3:6],
        q_new,
        state.ba + dx[9:12],
        state.bg + dx[12:15],
        state.t,
    )
