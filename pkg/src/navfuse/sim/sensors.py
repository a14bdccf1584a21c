"""Sensor synthesis: IMU (inverse mechanization), LiDAR scans, GNSS epochs."""

from dataclasses import dataclass

import numpy as np

from ..geodesy import ecef_to_enu_matrix, geodetic_to_ecef
from ..gridmap import Pose
from ..rtk import GnssEpoch
from ..sins import ImuSample, NavState, invert_mechanize
from .rng import stream_rng


# ---------------------------------------------------------------------------
# IMU
# ---------------------------------------------------------------------------

@dataclass
class ImuSynthesis:
    samples: list
    ba_true: np.ndarray       # (N-1, 3) accel bias history (constant + walk)
    bg_true: np.ndarray


def synthesize_imu(truth, imu_spec, seed, noise=True):
    """Manufacture IMU readings whose re-integration reproduces the truth.

    Each interval's bias-free rates come from the exact inverse of the
    mechanization step; constant biases, white noise and a small bias random
    walk are then layered on per the spec.
    """
    n = truth.t.shape[0]
    dt = truth.dt
    earth = truth.frame.model

    bias_rng = stream_rng(seed, "imu_bias")
    ba0 = bias_rng.normal(0.0, imu_spec.ba_init, 3) if noise else np.zeros(3)
    bg0 = bias_rng.normal(0.0, imu_spec.bg_init, 3) if noise else np.zeros(3)

    noise_rng = stream_rng(seed, "imu_noise")
    if noise:
        wg = noise_rng.normal(0.0, imu_spec.sigma_gyro / np.sqrt(dt), (n - 1, 3))
        wa = noise_rng.normal(0.0, imu_spec.sigma_accel / np.sqrt(dt), (n - 1, 3))
        walk_g = np.cumsum(
            noise_rng.normal(0.0, imu_spec.sigma_bg_walk * np.sqrt(dt), (n - 1, 3)),
            axis=0)
        walk_a = np.cumsum(
            noise_rng.normal(0.0, imu_spec.sigma_ba_walk * np.sqrt(dt), (n - 1, 3)),
            axis=0)
    else:
        wg = wa = np.zeros((n - 1, 3))
        walk_g = walk_a = np.zeros((n - 1, 3))
    bg_hist = bg0[None, :] + walk_g
    ba_hist = ba0[None, :] + walk_a

    samples = []
    state = NavState(truth.r[0].copy(), truth.v[0].copy(), truth.q[0].copy(),
                     t=float(truth.t[0]))
    for k in range(n - 1):
        nxt = NavState(truth.r[k + 1].copy(), truth.v[k + 1].copy(),
                       truth.q[k + 1].copy(), t=float(truth.t[k + 1]))
        omega, f = invert_mechanize(state, nxt, dt, earth)
        samples.append(ImuSample(float(truth.t[k + 1]),
                                 omega + bg_hist[k] + wg[k],
                                 f + ba_hist[k] + wa[k]))
        state = nxt
    return ImuSynthesis(samples, ba_hist, bg_hist)


# ---------------------------------------------------------------------------
# LiDAR
# ---------------------------------------------------------------------------

def _disc_offsets(radius_cells):
    r = int(np.ceil(radius_cells))
    ii, jj = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1),
                         indexing="ij")
    keep = ii * ii + jj * jj <= radius_cells * radius_cells
    return np.stack([ii[keep], jj[keep]], axis=1)


class ScanSynthesizer:
    """Draws sparse per-cell returns from the world around the truth pose."""

    def __init__(self, scenario, world):
        self.scenario = scenario
        self.world = world
        self.spec = scenario.lidar
        self.res = scenario.resolution
        self._disc = _disc_offsets(self.spec.range / self.res)

    def scan(self, index, x, y, alt, heading, t):
        """Body-frame (n, 4) points for scan ``index`` at the given pose."""
        rng = stream_rng(self.scenario.seed, "lidar_scan", index)
        center = np.array([np.floor(x / self.res), np.floor(y / self.res)],
                          dtype=np.int64)
        cells = center[None, :] + self._disc
        pick = rng.random(cells.shape[0]) < self.spec.sparsity
        cells = cells[pick]
        changed = t >= self.scenario.change_time and self._has_changes()
        inten, cell_alt, valid = self.world.sample_cells(cells, changed=changed)
        cells, inten, cell_alt = cells[valid], inten[valid], cell_alt[valid]
        m = cells.shape[0]
        if m == 0:
            return np.zeros((0, 4))
        jitter = rng.uniform(-0.5, 0.5, (m, 2)) * self.res
        pw = np.zeros((m, 3))
        pw[:, 0:2] = (cells + 0.5) * self.res + jitter
        pw[:, 2] = cell_alt + rng.normal(0.0, self.spec.sigma_altitude, m)
        vals = inten + rng.normal(0.0, self.spec.sigma_intensity, m)
        pose = Pose(x, y, alt, 0.0, 0.0, heading)
        body = (pw - pose.translation()) @ pose.rotation()
        return np.concatenate([body, vals[:, None]], axis=1)

    def _has_changes(self):
        w = self.scenario.world
        return len(w.change_interval) == 2 and (
            w.change_fraction > 0.0 or w.change_new_wall)


def synthesize_scan(scenario, world, index, x, y, alt, heading, t=None):
    synth = ScanSynthesizer(scenario, world)
    return synth.scan(index, x, y, alt, heading,
                      t if t is not None else scenario.change_time)


# ---------------------------------------------------------------------------
# GNSS
# ---------------------------------------------------------------------------

@dataclass
class Constellation:
    az0: np.ndarray
    el0: np.ndarray
    az_rate: np.ndarray
    el_rate: np.ndarray
    dist: np.ndarray
    wavelength: np.ndarray
    enu_to_ecef: np.ndarray
    anchor_ecef: np.ndarray

    def positions(self, t):
        az = self.az0 + self.az_rate * t
        el = self.el0 + self.el_rate * t
        unit_enu = np.stack([np.sin(az) * np.cos(el),
                             np.cos(az) * np.cos(el),
                             np.sin(el)], axis=1)
        return self.anchor_ecef[None, :] + (unit_enu @ self.enu_to_ecef.T) \
            * self.dist[:, None]


def build_constellation(scenario, frame):
    from ..rtk import GPS_L1_WAVELENGTH
    spec = scenario.gnss
    rng = stream_rng(scenario.seed, "gnss_constellation")
    n = spec.n_sats
    az0 = rng.uniform(0.0, 2.0 * np.pi, n)
    el0 = rng.uniform(spec.min_elevation + 0.12, 1.35, n)
    az_rate = rng.uniform(-1.0, 1.0, n) * 1.2e-4
    el_rate = rng.uniform(-1.0, 1.0, n) * 4.0e-5
    dist = rng.uniform(2.0e7, 2.4e7, n)
    anchor = np.array([np.deg2rad(scenario.anchor_lon_deg),
                       np.deg2rad(scenario.anchor_lat_deg), 0.0])
    if frame.model.is_flat:
        anchor_ecef = np.zeros(3)
        enu_to_ecef = np.eye(3)
    else:
        anchor_ecef = geodetic_to_ecef(anchor)
        enu_to_ecef = ecef_to_enu_matrix(anchor[0], anchor[1]).T
    return Constellation(az0, el0, az_rate, el_rate, dist,
                         np.full(n, GPS_L1_WAVELENGTH), enu_to_ecef, anchor_ecef)


@dataclass
class GnssTruth:
    """Bookkeeping the tests use: true ambiguities and rover positions."""

    ambiguities: dict          # epoch index -> (n,) int array
    rover_ecef: dict           # epoch index -> (3,)
    slips_applied: list        # (t, sat, cycles) actually injected


def rover_ecef_at(truth, k):
    if truth.frame.model.is_flat:
        return truth.r[k].copy()
    return geodetic_to_ecef(truth.r[k])


def synthesize_gnss(scenario, truth, constellation=None):
    """GNSS epochs along the truth at the configured rate.

    Returns (epochs, base_ecef, GnssTruth).  Outage windows suppress whole
    epochs; multipath windows inflate the range noise; slip injections bump
    the per-satellite integer ambiguity from that epoch onward.
    """
    spec = scenario.gnss
    frame = truth.frame
    cons = constellation or build_constellation(scenario, frame)
    n_sats = spec.n_sats

    amb_rng = stream_rng(scenario.seed, "gnss_ambiguity")
    amb = amb_rng.integers(-40, 40, n_sats).astype(np.int64)
    clock_rng = stream_rng(scenario.seed, "gnss_clock")

    if frame.model.is_flat:
        base_ecef = np.array([spec.base_offset[0], spec.base_offset[1], 0.0])
    else:
        base_geo = frame.from_xy(spec.base_offset[0], spec.base_offset[1], 0.0)
        base_ecef = geodetic_to_ecef(base_geo)

    step = max(int(round((1.0 / spec.rate) / truth.dt)), 1)
    idxs = np.arange(0, truth.t.shape[0], step)

    epochs = []
    gtruth = GnssTruth({}, {}, [])
    pending_slips = sorted(spec.slip_injections)
    for ei, k in enumerate(idxs):
        t = float(truth.t[k])
        while pending_slips and pending_slips[0][0] <= t:
            _, sat, cycles = pending_slips.pop(0)
            if 0 <= int(sat) < n_sats:
                amb[int(sat)] += int(cycles)
                gtruth.slips_applied.append((t, int(sat), int(cycles)))
        if any(t0 <= t <= t1 for t0, t1 in spec.outage_windows):
            continue
        mult = 1.0
        for t0, t1, factor in spec.multipath_windows:
            if t0 <= t <= t1:
                mult = factor
        rng = stream_rng(scenario.seed, "gnss_epoch", ei)
        rover = rover_ecef_at(truth, k)
        sat_pos = cons.positions(t)
        d_rov = sat_pos - rover[None, :]
        rng_rov = np.linalg.norm(d_rov, axis=1)
        rng_base = np.linalg.norm(sat_pos - base_ecef[None, :], axis=1)
        if frame.model.is_flat:
            up = np.array([0.0, 0.0, 1.0])
            elev = np.arcsin(np.clip(d_rov @ up / rng_rov, -1.0, 1.0))
        else:
            enu = (d_rov / rng_rov[:, None]) @ cons.enu_to_ecef
            elev = np.arcsin(np.clip(enu[:, 2], -1.0, 1.0))
        visible = elev > spec.min_elevation
        if visible.sum() < 2:
            continue
        ctau = spec.clock_offset + spec.clock_drift * t \
            + clock_rng.normal(0.0, 1e-3)
        sd_geo = rng_rov - rng_base
        wl = cons.wavelength
        sd_range = sd_geo + ctau + rng.normal(0.0, spec.sigma_range * mult, n_sats)
        sd_phase = sd_geo + ctau - wl * amb \
            + rng.normal(0.0, spec.sigma_phase, n_sats)
        sel = np.nonzero(visible)[0]
        epochs.append(GnssEpoch(
            t=t,
            sats=sel.copy(),
            sat_pos=sat_pos[sel],
            sd_range=sd_range[sel],
            sd_phase=sd_phase[sel],
            wavelength=wl[sel],
            elevation=elev[sel],
        ))
        gtruth.ambiguities[len(epochs) - 1] = amb[sel].copy()
        gtruth.rover_ecef[len(epochs) - 1] = rover
    return epochs, base_ecef, gtruth
