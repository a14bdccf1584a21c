"""End-to-end wiring: map survey, localization replay in several modes.

Modes
-----
``3sys``         LiDAR + GNSS + IMU fusion
``2sys``         LiDAR + IMU fusion
``lidar-only``   raw LiDAR fixes with a dead-reckoned prior
``gnss-only``    RTK solutions alone
``intensity-only``  2sys with the intensity cue only and no heading step
``heading-off``  2sys with adaptive blending but no heading refinement
``fixed-gamma``  2sys with a constant 0.5 cue blend
"""

import heapq
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GeometryError, LocalizationError, NavfuseError
from .eskf import (FilterConfig, FusionEngine, GnssPositionMeas, LidarPoseMeas,
                   TimedMeasurement)
from .geodesy import ecef_to_enu_matrix
from .gridmap import (GridConfig, LidarMap, MapAccumulator, MapTile, Pose,
                      finalize_map)
from .lidarloc import LidarLocConfig, LidarLocalizer
from .quat import att_to_quat, heading_of, quat_to_att
from .rtk import RtkConfig, RtkEngine
from .sim import World, stream_rng
from .sim.truth import generate_truth, scenario_frame
from .sins import NavState, mechanize

logger = logging.getLogger(__name__)

MODES = ("3sys", "2sys", "lidar-only", "gnss-only", "intensity-only",
         "heading-off", "fixed-gamma")


@dataclass
class PipelineConfig:
    lidar: LidarLocConfig = field(default_factory=lambda: LidarLocConfig(
        window_half_width=10))
    filter: FilterConfig = field(default_factory=FilterConfig)
    rtk: RtkConfig = field(default_factory=RtkConfig)
    lidar_alt_var: float = 0.04          # m^2, fixed fix-altitude variance
    lidar_heading_var: float = np.deg2rad(0.5) ** 2
    log_decimation: int = 10             # trajectory rows per IMU samples


def mode_lidar_config(mode, base):
    cfg = replace(base)
    if mode == "intensity-only":
        cfg.gamma_mode = "intensity"
        cfg.heading_enabled = False
    elif mode == "heading-off":
        cfg.heading_enabled = False
    elif mode == "fixed-gamma":
        cfg.gamma_mode = "fixed"
        cfg.gamma_fixed = 0.5
    return cfg


# ---------------------------------------------------------------------------
# Map survey
# ---------------------------------------------------------------------------

def build_map_for_scenario(scenario, truth=None):
    """Survey the pre-change world into a finalized map.

    Every corridor cell receives a configured number of noisy observations,
    accumulated through the same running-statistics core the scan path uses.
    """
    frame = scenario_frame(scenario)
    if truth is None:
        truth = generate_truth(scenario, frame)
    world = World(scenario, truth.xy, cache_tiles=4)
    grid_cfg = GridConfig(resolution=scenario.resolution,
                          tile_dim=scenario.tile_dim)
    acc = MapAccumulator(grid_cfg)
    spec = scenario.survey
    k_obs = max(int(spec.obs_per_cell), 2)
    for tile in world.corridor_tiles():
        li, lj = world.corridor_cells(tile)
        if li.size == 0:
            continue
        fields = world._tile_fields(tile)
        rng = stream_rng(scenario.seed, "map_survey", tile[0], tile[1])
        inten = fields["int_pre"][li, lj].astype(float)
        alt = fields["alt_pre"][li, lj].astype(float)
        draws_i = inten[None, :] + rng.normal(0.0, spec.sigma_intensity,
                                              (k_obs, li.size))
        draws_a = alt[None, :] + rng.normal(0.0, spec.sigma_altitude,
                                            (k_obs, li.size))
        tile_acc = acc._tile(tile)
        mean_i = draws_i.mean(axis=0)
        mean_a = draws_a.mean(axis=0)
        tile_acc.n[li, lj] = k_obs
        tile_acc.i_mean[li, lj] = mean_i
        tile_acc.i_m2[li, lj] = ((draws_i - mean_i[None, :]) ** 2).sum(axis=0)
        tile_acc.a_mean[li, lj] = mean_a
        tile_acc.a_m2[li, lj] = ((draws_a - mean_a[None, :]) ** 2).sum(axis=0)
    return finalize_map(acc)


# ---------------------------------------------------------------------------
# Localization replay
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryRow:
    t: float
    r: np.ndarray          # lon, lat, alt (or meters in flat mode)
    v: np.ndarray
    att: tuple             # roll, pitch, yaw
    sigma_enu: np.ndarray  # meters


@dataclass
class LocalizationRun:
    mode: str
    rows: list
    fixes: list            # (t, LidarFix)
    rtk_solutions: list
    slip_reports: list
    stats: dict

    def as_array(self):
        out = np.zeros((len(self.rows), 13))
        for i, row in enumerate(self.rows):
            out[i] = [row.t, *row.r, *row.v, *row.att, *row.sigma_enu]
        return out


def _nav_to_row(nav, P, frame):
    jac = frame.model.meters_jacobian(nav.r)
    sig = np.sqrt(np.maximum(np.diag(P)[0:3], 0.0)) * jac
    h, p, r = quat_to_att(nav.q)
    return TrajectoryRow(nav.t, nav.r.copy(), nav.v.copy(), (r, p, h), sig)


def _lidar_measurement(fix, frame, nav_ref, cfg):
    """Convert a planar fix into navigation-frame units with its covariance."""
    geo = frame.from_xy(fix.x, fix.y, fix.alt)
    jac = frame.model.meters_jacobian(nav_ref.r)
    J = np.diag([1.0 / jac[0], 1.0 / jac[1]])
    R = np.zeros((4, 4))
    R[0:2, 0:2] = J @ fix.cov_xy @ J.T
    R[2, 2] = cfg.lidar_alt_var
    R[3, 3] = cfg.lidar_heading_var
    return LidarPoseMeas(geo[0], geo[1], fix.alt, fix.heading, R)


def _gnss_measurement(sol, frame, nav_ref):
    if frame.model.is_flat:
        geo = sol.position_ecef
        cov_enu = sol.cov_pos
    else:
        geo = sol.position_geodetic
        rot = ecef_to_enu_matrix(geo[0], geo[1])
        cov_enu = rot @ sol.cov_pos @ rot.T
    jac = frame.model.meters_jacobian(nav_ref.r)
    J = np.diag(1.0 / jac)
    R = J @ cov_enu @ J.T
    return GnssPositionMeas(geo[0], geo[1], geo[2], R)


def run_localization(dataset, lidar_map, mode="3sys", cfg=None):
    if mode not in MODES:
        raise NavfuseError(f"unknown mode {mode!r}; choose from {MODES}")
    cfg = cfg or PipelineConfig()
    if mode == "gnss-only":
        return _run_gnss_only(dataset, cfg)
    if mode == "lidar-only":
        return _run_lidar_only(dataset, lidar_map, cfg)
    return _run_fused(dataset, lidar_map, mode, cfg)


def _delay_sequence(scenario, kind, count):
    spec = scenario.delays
    rng = stream_rng(scenario.seed, f"delay_{kind}")
    mean = getattr(spec, f"{kind}_mean")
    jitter = getattr(spec, f"{kind}_jitter")
    return np.clip(mean + jitter * rng.standard_normal(count), 1e-3, None)


def _run_fused(dataset, lidar_map, mode, cfg):
    scenario = dataset.scenario
    frame = dataset.frame
    truth = dataset.truth
    use_gnss = mode == "3sys"

    nav0 = truth.nav_state(0)
    engine = FusionEngine(nav0, cfg=cfg.filter, earth=frame.model)
    rows = {}

    def hook(nav, P):
        rows[round(nav.t, 9)] = _nav_to_row(nav, P, frame)

    engine.trajectory_hook = hook
    hook(nav0, engine.estimate()[1])

    localizer = LidarLocalizer(lidar_map, mode_lidar_config(mode, cfg.lidar))
    rtk = RtkEngine(dataset.base_ecef, cfg.rtk) if use_gnss else None

    lidar_delays = _delay_sequence(scenario, "lidar", len(dataset.scans))
    gnss_delays = _delay_sequence(scenario, "gnss", len(dataset.gnss))

    scan_times = {round(t, 9): (i, pts) for i, (t, pts) in enumerate(dataset.scans)}
    gnss_times = {round(ep.t, 9): (i, ep) for i, ep in enumerate(dataset.gnss)}

    delivery = []   # heap of (t_received, seq, TimedMeasurement)
    seq = 0
    stats = {"lidar_fixes": 0, "lidar_failures": 0, "gnss_solutions": 0,
             "gnss_failures": 0, "slips_flagged": 0}
    slip_reports = []
    fixes = []
    rtk_solutions = []
    prev_prior_xy = None

    for sample in dataset.imu:
        while delivery and delivery[0][0] <= sample.t:
            _, _, tm = heapq.heappop(delivery)
            engine.add_measurement(tm)
        engine.add_imu(sample)
        key = round(sample.t, 9)

        if key in scan_times:
            si, pts = scan_times[key]
            nav, P = engine.estimate()
            x, y = frame.to_xy(nav.r)
            prior = Pose(x, y, float(nav.r[2]), 0.0, 0.0, heading_of(nav.q))
            disp = None
            if prev_prior_xy is not None:
                disp = np.array([x, y]) - prev_prior_xy
            prev_prior_xy = np.array([x, y])
            try:
                fix = localizer.process(pts, prior, displacement=disp)
            except (LocalizationError, NavfuseError) as exc:
                stats["lidar_failures"] += 1
                logger.debug("lidar fix failed at t=%.2f: %s", sample.t, exc)
            else:
                stats["lidar_fixes"] += 1
                fixes.append((sample.t, fix))
                meas = _lidar_measurement(fix, frame, nav, cfg)
                tm = TimedMeasurement(sample.t, sample.t + lidar_delays[si],
                                      meas, degraded=fix.degraded)
                heapq.heappush(delivery, (tm.t_received, seq, tm))
                seq += 1

        if use_gnss and key in gnss_times:
            gi, epoch = gnss_times[key]
            nav, P = engine.estimate()
            if frame.model.is_flat:
                ins_pos = nav.r.copy()
            else:
                from .geodesy import geodetic_to_ecef
                ins_pos = geodetic_to_ecef(nav.r)
            jac = frame.model.meters_jacobian(nav.r)
            ins_var = np.maximum(np.diag(P)[0:3] * jac ** 2, 1e-6)
            try:
                sol, slips = rtk.process(epoch, x_prior=ins_pos,
                                         ins_pos=ins_pos,
                                         ins_var=ins_var * 4.0)
            except GeometryError as exc:
                stats["gnss_failures"] += 1
                logger.debug("rtk failed at t=%.2f: %s", sample.t, exc)
            else:
                stats["gnss_solutions"] += 1
                rtk_solutions.append(sol)
                if slips is not None:
                    slip_reports.append((sample.t, slips))
                    stats["slips_flagged"] += len(slips.slips)
                meas = _gnss_measurement(sol, frame, nav)
                tm = TimedMeasurement(sample.t, sample.t + gnss_delays[gi], meas)
                heapq.heappush(delivery, (tm.t_received, seq, tm))
                seq += 1

    while delivery:
        _, _, tm = heapq.heappop(delivery)
        engine.add_measurement(tm)

    stats["rejected_updates"] = engine.rejected_updates
    stats["dropped_measurements"] = engine.dropped_measurements
    ordered = [rows[k] for k in sorted(rows)]
    ordered = ordered[:: max(cfg.log_decimation, 1)] if cfg.log_decimation > 1 \
        else ordered
    return LocalizationRun(mode, ordered, fixes, rtk_solutions, slip_reports,
                           stats)


def _run_lidar_only(dataset, lidar_map, cfg):
    """Raw fixes; the prior dead-reckons through the IMU between scans."""
    scenario = dataset.scenario
    frame = dataset.frame
    truth = dataset.truth
    nav = truth.nav_state(0)
    localizer = LidarLocalizer(lidar_map, cfg.lidar)
    scan_times = {round(t, 9): (i, pts) for i, (t, pts) in enumerate(dataset.scans)}

    rows = []
    fixes = []
    stats = {"lidar_fixes": 0, "lidar_failures": 0}
    prev_xy = None
    for sample in dataset.imu:
        nav = mechanize(nav, sample, sample.t - nav.t, frame.model)
        key = round(sample.t, 9)
        if key not in scan_times:
            continue
        _, pts = scan_times[key]
        x, y = frame.to_xy(nav.r)
        prior = Pose(x, y, float(nav.r[2]), 0.0, 0.0, heading_of(nav.q))
        disp = None if prev_xy is None else np.array([x, y]) - prev_xy
        prev_xy = np.array([x, y])
        try:
            fix = localizer.process(pts, prior, displacement=disp)
        except (LocalizationError, NavfuseError):
            stats["lidar_failures"] += 1
            continue
        stats["lidar_fixes"] += 1
        fixes.append((sample.t, fix))
        # hard feedback: pin the dead-reckoner to the fix
        geo = frame.from_xy(fix.x, fix.y, fix.alt)
        nav.r[0], nav.r[1], nav.r[2] = geo[0], geo[1], fix.alt
        nav.q = att_to_quat(fix.heading, 0.0, 0.0)
        sig = np.sqrt(np.diag(fix.cov_xy))
        rows.append(TrajectoryRow(sample.t, nav.r.copy(), nav.v.copy(),
                                  (0.0, 0.0, fix.heading),
                                  np.array([sig[0], sig[1], 0.2])))
    return LocalizationRun("lidar-only", rows, fixes, [], [], stats)


def _run_gnss_only(dataset, cfg):
    frame = dataset.frame
    rtk = RtkEngine(dataset.base_ecef, cfg.rtk)
    rows = []
    solutions = []
    slip_reports = []
    stats = {"gnss_solutions": 0, "gnss_failures": 0, "fixed_epochs": 0}
    for epoch in dataset.gnss:
        try:
            sol, slips = rtk.process(epoch)
        except GeometryError:
            stats["gnss_failures"] += 1
            continue
        stats["gnss_solutions"] += 1
        stats["fixed_epochs"] += int(sol.fixed)
        solutions.append(sol)
        if slips is not None:
            slip_reports.append((epoch.t, slips))
        geo = sol.position_ecef if frame.model.is_flat else sol.position_geodetic
        sig = np.sqrt(np.maximum(sol.var_axes, 0.0))
        rows.append(TrajectoryRow(epoch.t, np.asarray(geo, dtype=float),
                                  np.zeros(3), (0.0, 0.0, 0.0), sig))
    return LocalizationRun("gnss-only", rows, [], solutions, slip_reports, stats)
