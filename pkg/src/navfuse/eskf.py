"""15-state error-state Kalman filter and the delayed-measurement engine.

Error state layout: position error (lon, lat, alt in rad/rad/m), ENU
velocity error, attitude error angle, accel bias error, gyro bias error.
Position and lon/lat blocks are carried in the native radian units of the
navigation state; conversion to meters happens only at reporting time.

Delay handling follows a two-filter design: the real-time head integrates
IMU data the moment it arrives, while a replay cursor rewinds to a delayed
measurement's occurrence time, applies it there, and re-propagates through
the buffered IMU stream (picking up any interleaved measurements in
chronological order) before overwriting the head.
"""

import bisect
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import FilterError
from .geodesy import Wgs84Model
from .quat import quat_to_dcm, skew, wrap_angle
from .sins import apply_correction, mechanize

logger = logging.getLogger(__name__)

STATE_DIM = 15
NOISE_DIM = 12


@dataclass
class ImuNoise:
    """Continuous-time IMU noise densities and bias magnitudes."""

    sigma_gyro: float = 5.8e-5       # rad/s/sqrt(Hz) white noise
    sigma_accel: float = 8.3e-4      # m/s^2/sqrt(Hz)
    sigma_bg_walk: float = 2.0e-8    # rad/s/sqrt(s) bias random walk
    sigma_ba_walk: float = 2.0e-6    # m/s^2/sqrt(s)
    bg_init: float = 2.4e-5          # rad/s initial bias spread
    ba_init: float = 4.9e-3          # m/s^2

    def psd_matrix(self):
        q = np.zeros(NOISE_DIM)
        q[0:3] = self.sigma_accel ** 2
        q[3:6] = self.sigma_gyro ** 2
        q[6:9] = self.sigma_ba_walk ** 2
        q[9:12] = self.sigma_bg_walk ** 2
        return np.diag(q)


@dataclass
class FilterConfig:
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    gate_probability: float = 0.997
    buffer_horizon: float = 2.0          # s of IMU + state history
    max_step: float = 0.1                # s
    degraded_inflation: float = 25.0     # R multiplier for degraded fixes
    init_pos_sigma: float = 1.0          # m
    init_vel_sigma: float = 0.5          # m/s
    init_att_sigma: float = np.deg2rad(1.0)
    init_heading_sigma: float = np.deg2rad(5.0)

    def gate_threshold(self, dim):
        return float(chi2.ppf(self.gate_probability, dim))


@dataclass
class LidarPoseMeas:
    """Position plus heading measurement in navigation units."""

    lon: float
    lat: float
    alt: float
    heading: float
    R: np.ndarray     # 4x4, (rad, rad, m, rad)^2


@dataclass
class GnssPositionMeas:
    lon: float
    lat: float
    alt: float
    R: np.ndarray     # 3x3


@dataclass
class TimedMeasurement:
    t_occurred: float
    t_received: float
    value: object                 # LidarPoseMeas | GnssPositionMeas
    degraded: bool = False

    @property
    def kind(self):
        return "lidar" if isinstance(self.value, LidarPoseMeas) else "gnss"

    def sort_token(self):
        """Arrival-order independent tiebreak for simultaneous measurements."""
        v = self.value
        if isinstance(v, LidarPoseMeas):
            payload = (v.lon, v.lat, v.alt, v.heading)
        else:
            payload = (v.lon, v.lat, v.alt)
        return (self.kind,) + payload


def initial_covariance(cfg, nav, earth=None):
    """Diagonal initial covariance in native state units."""
    earth = earth or Wgs84Model()
    jac = earth.meters_jacobian(nav.r)
    P = np.zeros((STATE_DIM, STATE_DIM))
    P[0, 0] = (cfg.init_pos_sigma / jac[0]) ** 2
    P[1, 1] = (cfg.init_pos_sigma / jac[1]) ** 2
    P[2, 2] = cfg.init_pos_sigma ** 2
    P[3:6, 3:6] = np.eye(3) * cfg.init_vel_sigma ** 2
    P[6, 6] = P[7, 7] = cfg.init_att_sigma ** 2
    P[8, 8] = cfg.init_heading_sigma ** 2
    P[9:12, 9:12] = np.eye(3) * cfg.imu_noise.ba_init ** 2
    P[12:15, 12:15] = np.eye(3) * cfg.imu_noise.bg_init ** 2
    return P


def build_F_G(nav, sample, earth=None):
    """Continuous-time error dynamics and noise input matrices."""
    earth = earth or Wgs84Model()
    ep = earth.params(nav.r, nav.v)
    C = quat_to_dcm(nav.q)
    f_n = C @ (sample.f - nav.ba)
    omega_in = ep.omega_ie_n + ep.omega_en_n

    F = np.zeros((STATE_DIM, STATE_DIM))
    F[0:3, 0:3] = -skew(ep.omega_en_n)
    F[0:3, 3:6] = ep.R_c
    F[3:6, 3:6] = -skew(2.0 * ep.omega_ie_n + ep.omega_en_n)
    F[3:6, 6:9] = skew(f_n)
    F[3:6, 9:12] = C
    F[6:9, 6:9] = -skew(omega_in)
    F[6:9, 12:15] = -C

    G = np.zeros((STATE_DIM, NOISE_DIM))
    G[3:6, 0:3] = C
    G[6:9, 3:6] = -C
    G[9:15, 6:12] = np.eye(6)
    return F, G


def propagate(P, F, G, Q, dt):
    """First-order covariance propagation over dt."""
    if not (0.0 < dt <= 0.1):
        raise FilterError(f"propagation interval out of range: {dt}")
    Phi = np.eye(STATE_DIM) + F * dt
    P_new = Phi @ P @ Phi.T + G @ Q @ G.T * dt
    P_new = 0.5 * (P_new + P_new.T)
    if np.any(np.diag(P_new) <= 0.0) or not np.all(np.isfinite(P_new)):
        raise FilterError("covariance ill-conditioned after propagation")
    return P_new


def _kf_update(P, H, R, z):
    """Joseph-form update from a zero-mean prior error state."""
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    try:
        gain = np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as exc:
        raise FilterError("singular innovation covariance") from exc
    dx = gain @ z
    A = np.eye(STATE_DIM) - gain @ H
    P_new = A @ P @ A.T + gain @ R @ gain.T
    P_new = 0.5 * (P_new + P_new.T)
    maha = float(z @ np.linalg.solve(S, z))
    return dx, P_new, maha


def lidar_H(nav):
    """Measurement matrix for a position + heading fix.

    The heading row follows from differentiating atan2(c12, c22) of the
    body-to-nav direction cosine matrix with respect to the attitude error.
    """
    C = quat_to_dcm(nav.q)
    c12, c22, c32 = C[0, 1], C[1, 1], C[2, 1]
    den = c12 * c12 + c22 * c22
    H = np.zeros((4, STATE_DIM))
    H[0:3, 0:3] = np.eye(3)
    H[3, 6] = -c12 * c32 / den
    H[3, 7] = -c22 * c32 / den
    H[3, 8] = 1.0
    return H


def lidar_innovation(nav, meas):
    """Predicted-minus-measured vector for a LiDAR fix."""
    from .quat import heading_of
    return np.array([
        nav.r[0] - meas.lon,
        nav.r[1] - meas.lat,
        nav.r[2] - meas.alt,
        wrap_angle(heading_of(nav.q) - meas.heading),
    ])


GNSS_H = np.zeros((3, STATE_DIM))
GNSS_H[0:3, 0:3] = np.eye(3)


def gnss_innovation(nav, meas):
    return np.array([
        nav.r[0] - meas.lon,
        nav.r[1] - meas.lat,
        nav.r[2] - meas.alt,
    ])


@dataclass
class UpdateResult:
    accepted: bool
    dx: np.ndarray
    mahalanobis: float
    threshold: float


def update_with_measurement(nav, P, meas, cfg, degraded=False):
    """Apply one measurement; returns (nav, P, UpdateResult).

    Rejected measurements (innovation gate) leave the state untouched.
    After an accepted update the correction is fed back into the navigation
    state and the internal error state is zero again.
    """
    if isinstance(meas, LidarPoseMeas):
        H = lidar_H(nav)
        z = lidar_innovation(nav, meas)
    else:
        H = GNSS_H
        z = gnss_innovation(nav, meas)
    R = np.asarray(meas.R, dtype=float)
    if degraded:
        R = R * cfg.degraded_inflation
    dx, P_new, maha = _kf_update(P, H, R, z)
    threshold = cfg.gate_threshold(z.shape[0])
    if maha > threshold:
        return nav, P, UpdateResult(False, np.zeros(STATE_DIM), maha, threshold)
    nav_new = apply_correction(nav, dx)
    return nav_new, P_new, UpdateResult(True, dx, maha, threshold)


# ---------------------------------------------------------------------------
# Delay and disorder handling
# ---------------------------------------------------------------------------

_KIND_INIT, _KIND_IMU, _KIND_MEAS = 0, 1, 2


@dataclass
class _Record:
    key: tuple                 # (t, kind_rank, tiebreak)
    kind: int
    payload: object
    nav: object = None         # snapshot after processing this record
    P: np.ndarray = None
    accepted: bool = True

    @property
    def t(self):
        return self.key[0]


class FusionEngine:
    """Owns the filter pair and the chronological buffer.

    ``add_imu`` drives the real-time filter; ``add_measurement`` accepts
    measurements in arbitrary arrival order and replays the buffer from the
    occurrence time so the final state matches chronological processing.
    """

    def __init__(self, nav0, P0=None, cfg=None, earth=None):
        self.cfg = cfg or FilterConfig()
        self.earth = earth or Wgs84Model()
        self.Q = self.cfg.imu_noise.psd_matrix()
        if P0 is None:
            P0 = initial_covariance(self.cfg, nav0, self.earth)
        rec = _Record((nav0.t, _KIND_INIT, ()), _KIND_INIT, None,
                      nav0.copy(), P0.copy())
        self._records = [rec]
        self._pending = []      # measurements occurring after the IMU head
        self.dropped_measurements = 0
        self.rejected_updates = 0
        self.trajectory_hook = None   # callable(nav, P) on every refold step

    # -- public API ---------------------------------------------------------

    @property
    def head_time(self):
        return self._records[-1].t

    def estimate(self):
        rec = self._records[-1]
        return rec.nav.copy(), rec.P.copy()

    def add_imu(self, sample):
        if sample.t <= self.head_time:
            raise FilterError("IMU stream must be strictly increasing in time")
        rec = _Record((sample.t, _KIND_IMU, ()), _KIND_IMU, sample)
        self._records.append(rec)
        self._refold(len(self._records) - 2)
        self._drain_pending()
        self._prune()

    def add_measurement(self, tm):
        if tm.t_occurred > self.head_time + 1e-12:
            bisect.insort(self._pending, tm,
                          key=lambda m: (m.t_occurred, m.sort_token()))
            return
        horizon_start = self.head_time - self.cfg.buffer_horizon
        if tm.t_occurred < max(horizon_start, self._records[0].t) - 1e-12:
            self.dropped_measurements += 1
            logger.warning("dropping measurement older than buffer horizon: "
                           "t=%.3f head=%.3f", tm.t_occurred, self.head_time)
            return
        self._insert_and_replay(tm)

    # -- internals ----------------------------------------------------------

    def _drain_pending(self):
        while self._pending and self._pending[0].t_occurred <= self.head_time + 1e-12:
            tm = self._pending.pop(0)
            self._insert_and_replay(tm)

    def _insert_and_replay(self, tm):
        key = (tm.t_occurred, _KIND_MEAS, tm.sort_token())
        rec = _Record(key, _KIND_MEAS, tm)
        keys = [r.key for r in self._records]
        idx = bisect.bisect_left(keys, key)
        if idx == 0:
            self.dropped_measurements += 1
            return
        self._records.insert(idx, rec)
        self._refold(idx - 1)

    def _next_imu_after(self, idx):
        for rec in self._records[idx:]:
            if rec.kind == _KIND_IMU:
                return rec.payload
        return None

    def _step_to(self, nav, P, t_target, sample):
        """Mechanize and propagate from nav.t to t_target with one sample."""
        dt = t_target - nav.t
        if dt <= 0.0:
            return nav, P
        F, G = build_F_G(nav, sample, self.earth)
        nav = mechanize(nav, sample, dt, self.earth)
        P = propagate(P, F, G, self.Q, dt)
        return nav, P

    def _refold(self, start_idx):
        """Recompute snapshots from records[start_idx] forward."""
        nav = self._records[start_idx].nav.copy()
        P = self._records[start_idx].P.copy()
        for i in range(start_idx + 1, len(self._records)):
            rec = self._records[i]
            if rec.kind == _KIND_IMU:
                nav, P = self._step_to(nav, P, rec.t, rec.payload)
            else:
                if rec.t > nav.t:
                    sample = self._next_imu_after(i)
                    if sample is None:
                        raise FilterError("measurement beyond buffered IMU data")
                    nav, P = self._step_to(nav, P, rec.t, sample)
                tm = rec.payload
                nav, P, res = update_with_measurement(nav, P, tm.value,
                                                      self.cfg, tm.degraded)
                rec.accepted = res.accepted
                if not res.accepted:
                    self.rejected_updates += 1
            rec.nav = nav.copy()
            rec.P = P.copy()
            if self.trajectory_hook is not None:
                self.trajectory_hook(rec.nav, rec.P)

    def _prune(self):
        cutoff = self.head_time - self.cfg.buffer_horizon
        first_keep = 0
        for i, rec in enumerate(self._records):
            if rec.t >= cutoff:
                break
            first_keep = i
        if first_keep > 0:
            del self._records[:first_keep]


def process_stream(imu_stream, measurements, nav0, P0=None, cfg=None,
                   earth=None):
    """Run the engine over an IMU stream with arrival-ordered measurements.

    ``measurements`` are TimedMeasurements delivered at their t_received,
    which may be delayed and out of order relative to occurrence times.
    Returns (trajectory rows, engine); rows are refreshed whenever a replay
    rewrites history, so late measurements back-correct earlier epochs.
    """
    engine = FusionEngine(nav0, P0, cfg, earth)
    rows = {}

    def hook(nav, P):
        rows[round(nav.t, 9)] = (nav, P)

    engine.trajectory_hook = hook
    deliveries = sorted(measurements,
                        key=lambda m: (m.t_received, m.t_occurred, m.sort_token()))
    di = 0
    for sample in imu_stream:
        while di < len(deliveries) and deliveries[di].t_received <= sample.t:
            engine.add_measurement(deliveries[di])
            di += 1
        engine.add_imu(sample)
    while di < len(deliveries):
        engine.add_measurement(deliveries[di])
        di += 1
    trajectory = [rows[k] for k in sorted(rows)]
    return trajectory, engine
