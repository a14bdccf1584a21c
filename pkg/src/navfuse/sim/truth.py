"""Ground-truth trajectory generation.

The planar path and speed profile are analytic (closed forms for straight
and circular kinds, arc-length parameterized cubic splines for waypoint
paths), giving twice-differentiable motion.  The geodetic position history
is then built by the same trapezoidal curvilinear rule the mechanization
uses, so inverse-mechanized IMU data re-integrates to the truth exactly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.optimize import brentq

from ..errors import ScenarioError
from ..geodesy import GeoFrame
from ..quat import att_to_quat

_MIN_SPEED = 1e-9


class _Path:
    """pos/d1/d2 with respect to arc length, plus total length."""

    def pos(self, s):
        raise NotImplementedError

    def d1(self, s):
        raise NotImplementedError

    def d2(self, s):
        raise NotImplementedError


class _StraightPath(_Path):
    def __init__(self, start, heading, length):
        self.p0 = np.asarray(start, dtype=float)
        self.u = np.array([np.sin(heading), np.cos(heading)])
        self.length = float(length)

    def pos(self, s):
        return self.p0[None, :] + np.multiply.outer(np.asarray(s, dtype=float), self.u)

    def d1(self, s):
        return np.broadcast_to(self.u, (np.size(s), 2)).copy()

    def d2(self, s):
        return np.zeros((np.size(s), 2))


class _CirclePath(_Path):
    """Counterclockwise for positive radius; starts heading north at angle 0."""

    def __init__(self, start, heading, radius, arc):
        self.r = float(radius)
        self.length = abs(arc) * self.r
        self.sign = 1.0 if arc >= 0 else -1.0
        # center sits to the left of the initial heading for ccw arcs
        u = np.array([np.sin(heading), np.cos(heading)])
        left = np.array([-u[1], u[0]])
        self.center = np.asarray(start, dtype=float) + self.sign * self.r * left
        self.phi0 = np.arctan2(start[1] - self.center[1], start[0] - self.center[0])

    def _phi(self, s):
        return self.phi0 + self.sign * np.asarray(s, dtype=float) / self.r

    def pos(self, s):
        phi = self._phi(s)
        return self.center[None, :] + self.r * np.stack(
            [np.cos(phi), np.sin(phi)], axis=-1)

    def d1(self, s):
        phi = self._phi(s)
        return self.sign * np.stack([-np.sin(phi), np.cos(phi)], axis=-1)

    def d2(self, s):
        phi = self._phi(s)
        return -np.stack([np.cos(phi), np.sin(phi)], axis=-1) / self.r


class _SplinePath(_Path):
    def __init__(self, waypoints, samples_per_meter=2.0):
        pts = np.asarray(waypoints, dtype=float)
        if pts.shape[0] < 2:
            raise ScenarioError("waypoint path needs at least 2 points")
        chord = np.concatenate([[0.0], np.cumsum(
            np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        if chord[-1] <= 0.0:
            raise ScenarioError("waypoints are coincident")
        base = CubicSpline(chord, pts, axis=0, bc_type="natural")
        # re-parameterize by arc length on a dense sampling
        u = np.linspace(0.0, chord[-1], max(int(chord[-1] * samples_per_meter), 16))
        dp = base(u, 1)
        speed_u = np.linalg.norm(dp, axis=1)
        s_of_u = np.concatenate([[0.0], np.cumsum(
            0.5 * (speed_u[1:] + speed_u[:-1]) * np.diff(u))])
        self.length = float(s_of_u[-1])
        # strictly increasing guard for the inverse interpolation
        s_of_u = np.maximum.accumulate(s_of_u + np.arange(len(s_of_u)) * 1e-12)
        u_of_s = PchipInterpolator(s_of_u, u)
        dense_s = np.linspace(0.0, self.length, len(u))
        self._spline = CubicSpline(dense_s, base(u_of_s(dense_s)), axis=0,
                                   bc_type="natural")

    def pos(self, s):
        return self._spline(np.asarray(s, dtype=float))

    def d1(self, s):
        return self._spline(np.asarray(s, dtype=float), 1)

    def d2(self, s):
        return self._spline(np.asarray(s, dtype=float), 2)


def _build_path(spec):
    if spec.kind == "straight":
        return _StraightPath(spec.start, spec.heading, spec.length)
    if spec.kind == "circle":
        return _CirclePath(spec.start, spec.heading, spec.radius, spec.arc)
    if spec.kind == "waypoints":
        return _SplinePath(spec.waypoints)
    if spec.kind == "static":
        return None
    raise ScenarioError(f"unknown trajectory kind {spec.kind!r}")


def _speed_profile(spec, length):
    """Returns (v(t), s(t), duration)."""
    if spec.speed_knots:
        knots = np.asarray(spec.speed_knots, dtype=float)
        if np.any(knots[:, 1] < 0.0):
            raise ScenarioError("speed profile must be non-negative")
        v = PchipInterpolator(knots[:, 0], knots[:, 1])
        s = v.antiderivative()
        t_hi = knots[-1, 0]
        while s(t_hi) < length:
            t_hi *= 2.0
            if t_hi > 1e6:
                raise ScenarioError("speed profile never covers the path")
        duration = brentq(lambda t: s(t) - length, 0.0, t_hi)
        return (lambda t: np.asarray(v(t), dtype=float),
                lambda t: np.asarray(s(t), dtype=float), float(duration))
    v0 = float(spec.speed)
    if v0 <= _MIN_SPEED:
        raise ScenarioError("constant speed must be positive")
    return (lambda t: np.full(np.shape(t), v0),
            lambda t: np.asarray(t, dtype=float) * v0, length / v0)


@dataclass
class TruthTrajectory:
    t: np.ndarray         # (N,)
    r: np.ndarray         # (N, 3) geodetic (or meters in flat mode)
    v: np.ndarray         # (N, 3) ENU velocity
    q: np.ndarray         # (N, 4) body->nav
    xy: np.ndarray        # (N, 2) map coordinates, projection of r
    heading: np.ndarray   # (N,) planar heading
    frame: GeoFrame

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def nav_state(self, k):
        from ..sins import NavState
        return NavState(self.r[k].copy(), self.v[k].copy(), self.q[k].copy(),
                        t=float(self.t[k]))


def scenario_frame(scenario):
    if scenario.flat_earth:
        return GeoFrame.flat()
    return GeoFrame.wgs84(np.deg2rad(scenario.anchor_lon_deg),
                          np.deg2rad(scenario.anchor_lat_deg))


def generate_truth(scenario, frame=None):
    """Sample the truth at IMU rate and integrate the geodetic position."""
    frame = frame or scenario_frame(scenario)
    spec = scenario.trajectory
    dt = 1.0 / scenario.imu.rate

    if spec.kind == "static":
        n = int(round(spec.duration / dt)) + 1
        t = np.arange(n) * dt
        p = np.tile(np.asarray(spec.start, dtype=float), (n, 1))
        vel = np.zeros((n, 2))
        heading = np.full(n, spec.heading)
    else:
        path = _build_path(spec)
        v_of_t, s_of_t, duration = _speed_profile(spec, path.length)
        n = int(np.floor(duration / dt)) + 1
        t = np.arange(n) * dt
        s = np.clip(s_of_t(t), 0.0, path.length)
        p = path.pos(s)
        tang = path.d1(s)
        vel = tang * v_of_t(t)[:, None]
        moving = np.linalg.norm(vel, axis=1) > _MIN_SPEED
        heading = np.where(moving,
                           np.arctan2(vel[:, 0], vel[:, 1]),
                           np.arctan2(tang[:, 0], tang[:, 1]))

    v_enu = np.concatenate([vel, np.zeros((n, 1))], axis=1)
    q = np.array([att_to_quat(h) for h in heading])

    # anchor the geodetic start so the projection of r[0] equals p[0]
    model = frame.model
    if model.is_flat:
        r = np.concatenate([p, np.zeros((n, 1))], axis=1)
        xy = p.copy()
    else:
        r = np.zeros((n, 3))
        r[0] = frame.from_xy(p[0, 0], p[0, 1], 0.0)
        for k in range(n - 1):
            ep = model.params(r[k], v_enu[k])
            r[k + 1] = r[k] + ep.R_c @ (0.5 * (v_enu[k] + v_enu[k + 1])) * dt
        xs, ys = frame.projection.forward(r[:, 0], r[:, 1])
        xy = np.stack([xs, ys], axis=1)

    return TruthTrajectory(t, r, v_enu, q, xy, heading, frame)
