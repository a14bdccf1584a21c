"""Loosely-coupled RTK positioning over single-differenced observations.

The observation model per satellite couples the SD pseudo-range and carrier
phase to the rover position correction, the relative receiver clock and one
float ambiguity per phase.  A weighted least-squares float solution feeds a
double-difference transformation and the integer search; an optional INS
position prior enters as a virtual observation to shrink the ambiguity
search space.  Cycle slips are detected on time-differenced observations
between consecutive epochs by fixing the time-differenced ambiguities and
flagging nonzero elements.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import resolve_ambiguities
from .errors import GeometryError
from .geodesy import ecef_to_geodetic

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299792458.0
GPS_L1_WAVELENGTH = 0.19029367279836487


@dataclass
class GnssEpoch:
    """Per-epoch SD observations; parallel arrays indexed by satellite."""

    t: float
    sats: np.ndarray        # satellite ids
    sat_pos: np.ndarray     # (n, 3) ECEF meters
    sd_range: np.ndarray    # meters
    sd_phase: np.ndarray    # meters
    wavelength: np.ndarray  # meters
    elevation: np.ndarray   # radians

    @property
    def n_sats(self):
        return int(self.sats.shape[0])


@dataclass
class RtkConfig:
    sigma_range: float = 0.5
    sigma_phase: float = 0.003
    ratio_threshold: float = 3.0
    search_max_nodes: int = 100_000
    min_sats: int = 4
    slip_min_common: int = 4
    iterations: int = 2


@dataclass
class FloatSolution:
    dx: np.ndarray            # (3,) rover position correction, ECEF
    clock: float              # relative receiver clock, meters
    ambiguities: np.ndarray   # float SD ambiguities, cycles
    cov: np.ndarray           # a-priori covariance of all parameters
    var_axes: np.ndarray      # posterior per-axis position variance (m^2)
    cov_pos: np.ndarray       # posterior 3x3 position covariance (m^2)
    residuals: np.ndarray
    n_obs: int
    n_params: int


@dataclass
class RtkSolution:
    t: float
    position_ecef: np.ndarray
    position_geodetic: np.ndarray
    fixed: bool
    ambiguities: np.ndarray
    ratio: float
    var_axes: np.ndarray
    cov_pos: np.ndarray       # ECEF position covariance
    n_obs: int


@dataclass
class SlipReport:
    slips: dict               # sat id -> integer cycles
    suspect_all: bool = False
    fixed: bool = True
    ratio: float = float("inf")


def elevation_weights(elevation):
    return np.sin(elevation) ** 2


def sd_geometric_range(sat_pos, x_rover, x_base):
    """Rover-minus-base geometric range, free of large-norm cancellation."""
    d_rov = np.asarray(sat_pos) - np.asarray(x_rover)[None, :]
    d_base = np.asarray(sat_pos) - np.asarray(x_base)[None, :]
    rng_rov = np.linalg.norm(d_rov, axis=1)
    rng_base = np.linalg.norm(d_base, axis=1)
    baseline = np.asarray(x_base, dtype=float) - np.asarray(x_rover, dtype=float)
    return np.sum((d_rov + d_base) * baseline[None, :], axis=1) \
        / (rng_rov + rng_base)


def _geometry(epoch, x_rover, x_base):
    """Line-of-sight rows and SD geometric ranges at the linearization point.

    The range difference is evaluated through the factored identity
    ``|s-r| - |s-b| = ((s-r)+(s-b)) . (b-r) / (|s-r|+|s-b|)`` which avoids
    the catastrophic cancellation of subtracting two 2e7 m norms.
    """
    d_rov = epoch.sat_pos - x_rover[None, :]
    d_base = epoch.sat_pos - x_base[None, :]
    rng_rov = np.linalg.norm(d_rov, axis=1)
    rng_base = np.linalg.norm(d_base, axis=1)
    los = -d_rov / rng_rov[:, None]     # d(range)/d(rover position)
    baseline = x_base - x_rover
    sd = np.sum((d_rov + d_base) * baseline[None, :], axis=1) \
        / (rng_rov + rng_base)
    return los, sd


def _solve_wls(A, P, y):
    N = A.T @ P @ A
    try:
        cov = np.linalg.inv(N)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("geometry deficient: normal matrix singular") from exc
    if not np.all(np.isfinite(cov)) or np.linalg.cond(N) > 1e14:
        raise GeometryError("geometry deficient: normal matrix ill-conditioned")
    x = cov @ (A.T @ P @ y)
    return x, cov


def solution_variance(B, P, V, n_obs, n_params):
    """Posterior solution variance from residuals and the geometry matrix.

    ``B`` holds one row per SD observation over (position, clock) only; the
    residual quadratic form scales the DOP factor.  The degrees of freedom
    are floored at one so degenerate setups stay finite.
    """
    dof = max(n_obs - n_params, 1)
    s2 = float(V @ P @ V) / dof
    q = np.linalg.inv(B.T @ P @ B)
    return np.diag(q)[0:3] * s2, q[0:3, 0:3] * s2


def float_solution(epoch, x_prior, x_base, cfg=None, ins_pos=None, ins_var=None):
    """Weighted least squares over ranges and phases with float ambiguities.

    ``ins_pos``/``ins_var`` add a virtual position observation (ECEF) that
    regularizes weak geometry and tightens the ambiguity covariance.
    """
    cfg = cfg or RtkConfig()
    n = epoch.n_sats
    use_ins = ins_pos is not None
    if n < cfg.min_sats and not use_ins:
        raise GeometryError(f"geometry deficient: {n} satellites")
    if n < 2:
        raise GeometryError("geometry deficient: need at least 2 satellites")

    w = elevation_weights(epoch.elevation)
    p_diag = np.concatenate([w / cfg.sigma_range ** 2, w / cfg.sigma_phase ** 2])
    x = np.asarray(x_prior, dtype=float).copy()
    n_par = 4 + n

    dx_total = np.zeros(3)
    clock = 0.0
    amb = np.zeros(n)
    for _ in range(cfg.iterations):
        los, sd_geo = _geometry(epoch, x, x_base)
        y_rng = epoch.sd_range - sd_geo - clock
        y_phs = epoch.sd_phase - sd_geo - clock + epoch.wavelength * amb
        A = np.zeros((2 * n + (3 if use_ins else 0), n_par))
        A[0:n, 0:3] = los
        A[0:n, 3] = 1.0
        A[n:2 * n, 0:3] = los
        A[n:2 * n, 3] = 1.0
        A[n:2 * n, 4:] = -np.diag(epoch.wavelength)
        y = np.concatenate([y_rng, y_phs])
        pd = p_diag
        if use_ins:
            A[2 * n:, 0:3] = np.eye(3)
            y = np.concatenate([y, np.asarray(ins_pos, dtype=float) - x])
            pd = np.concatenate([p_diag, 1.0 / np.asarray(ins_var, dtype=float)])
        P = np.diag(pd)
        sol, cov = _solve_wls(A, P, y)
        x = x + sol[0:3]
        dx_total = dx_total + sol[0:3]
        clock = clock + sol[3]
        amb = amb + sol[4:]

    los, sd_geo = _geometry(epoch, x, x_base)
    v_rng = epoch.sd_range - (sd_geo + clock)
    v_phs = epoch.sd_phase - (sd_geo + clock - epoch.wavelength * amb)
    V = np.concatenate([v_rng, v_phs])
    B = np.zeros((2 * n, 4))
    B[0:n, 0:3] = los
    B[n:, 0:3] = los
    B[:, 3] = 1.0
    P_sd = np.diag(p_diag)
    var_axes, cov_pos = solution_variance(B, P_sd, V, 2 * n, n_par)
    return FloatSolution(dx_total, clock, amb, cov, var_axes, cov_pos,
                         V, 2 * n, n_par), x


def sd_to_dd(ambiguities, cov_amb, elevation):
    """Difference SD float ambiguities against the highest satellite.

    Returns (dd, dd_cov, D, ref_index); ``dd[j]`` is ambiguity j minus the
    reference, rows of D ordered by the original satellite order with the
    reference column skipped.
    """
    n = ambiguities.shape[0]
    if n < 2:
        raise GeometryError("need at least 2 satellites to double-difference")
    ref = int(np.argmax(elevation))
    D = np.zeros((n - 1, n))
    row = 0
    for j in range(n):
        if j == ref:
            continue
        D[row, j] = 1.0
        D[row, ref] = -1.0
        row += 1
    return D @ ambiguities, D @ cov_amb @ D.T, D, ref


def fixed_solution(epoch, x_float, x_base, dd_int, ref, cfg):
    """Re-solve position with double-differenced ambiguities constrained.

    Parameterizes the SD ambiguities as one float reference ambiguity plus
    the fixed integer differences, so phases contribute their full precision
    to the position.
    """
    n = epoch.n_sats
    w = elevation_weights(epoch.elevation)
    p_diag = np.concatenate([w / cfg.sigma_range ** 2, w / cfg.sigma_phase ** 2])
    dd_full = np.zeros(n)
    row = 0
    for j in range(n):
        if j == ref:
            continue
        dd_full[j] = dd_int[row]
        row += 1

    x = x_float.copy()
    clock = 0.0
    n_ref = 0.0
    for _ in range(cfg.iterations):
        los, sd_geo = _geometry(epoch, x, x_base)
        y_rng = epoch.sd_range - sd_geo - clock
        y_phs = (epoch.sd_phase - sd_geo - clock
                 + epoch.wavelength * (n_ref + dd_full))
        A = np.zeros((2 * n, 5))
        A[0:n, 0:3] = los
        A[0:n, 3] = 1.0
        A[n:, 0:3] = los
        A[n:, 3] = 1.0
        A[n:, 4] = -epoch.wavelength
        sol, cov = _solve_wls(A, np.diag(p_diag), np.concatenate([y_rng, y_phs]))
        x = x + sol[0:3]
        clock += sol[3]
        n_ref += sol[4]

    los, sd_geo = _geometry(epoch, x, x_base)
    v_rng = epoch.sd_range - (sd_geo + clock)
    v_phs = epoch.sd_phase - (sd_geo + clock - epoch.wavelength * (n_ref + dd_full))
    V = np.concatenate([v_rng, v_phs])
    B = np.zeros((2 * n, 4))
    B[0:n, 0:3] = los
    B[n:, 0:3] = los
    B[:, 3] = 1.0
    var_axes, cov_pos = solution_variance(B, np.diag(p_diag), V, 2 * n, 5)
    return x, n_ref + dd_full, var_axes, cov_pos


def solve_epoch(epoch, x_prior, x_base, cfg=None, ins_pos=None, ins_var=None):
    """Full epoch processing: float solution, ambiguity fix attempt, output."""
    cfg = cfg or RtkConfig()
    flt, x_flt = float_solution(epoch, x_prior, x_base, cfg, ins_pos, ins_var)
    fixed = False
    ratio = 0.0
    amb_out = flt.ambiguities
    x_out = x_flt
    var_axes = flt.var_axes
    cov_pos = flt.cov_pos
    if epoch.n_sats >= 2:
        amb_cov = flt.cov[4:, 4:]
        dd, dd_cov, _D, ref = sd_to_dd(flt.ambiguities, amb_cov, epoch.elevation)
        ar = resolve_ambiguities(dd, dd_cov, cfg.ratio_threshold,
                                 max_nodes=cfg.search_max_nodes)
        ratio = ar.ratio
        if ar.fixed and ar.candidates.shape[0] > 0:
            x_fix, amb_fix, var_fix, cov_fix = fixed_solution(
                epoch, x_flt, x_base, ar.candidates[0], ref, cfg)
            fixed = True
            amb_out = amb_fix
            x_out = x_fix
            var_axes = var_fix
            cov_pos = cov_fix
    return RtkSolution(epoch.t, x_out, ecef_to_geodetic(x_out), fixed,
                       amb_out, ratio, var_axes, cov_pos, flt.n_obs)


def detect_cycle_slips(epoch_prev, epoch_cur, x_prev, x_base, cfg=None):
    """Flag satellites whose carrier phase jumped by whole cycles.

    Time-differenced ranges estimate the incremental position and clock
    drift; time-differenced phases then carry integer ambiguity increments
    that fix to zero in the slip-free case.  Nonzero fixed elements are
    attributed by the minimal-slip explanation (the most common difference
    value is assigned to the reference satellite).
    """
    cfg = cfg or RtkConfig()
    prev_idx = {int(s): i for i, s in enumerate(epoch_prev.sats)}
    common = [(prev_idx[int(s)], i) for i, s in enumerate(epoch_cur.sats)
              if int(s) in prev_idx]
    if len(common) < cfg.slip_min_common:
        return SlipReport({}, suspect_all=True, fixed=False, ratio=0.0)
    ip = np.array([c[0] for c in common])
    ic = np.array([c[1] for c in common])

    # satellite motion between epochs does not cancel in the time
    # difference; remove the geometry change predicted at the previous
    # rover position so only the rover increment and clock drift remain
    x_prev = np.asarray(x_prev, dtype=float)
    x_base = np.asarray(x_base, dtype=float)
    rng_cur = np.linalg.norm(epoch_cur.sat_pos[ic] - x_prev[None, :], axis=1)
    rng_prev = np.linalg.norm(epoch_prev.sat_pos[ip] - x_prev[None, :], axis=1)
    base_cur = np.linalg.norm(epoch_cur.sat_pos[ic] - x_base[None, :], axis=1)
    base_prev = np.linalg.norm(epoch_prev.sat_pos[ip] - x_base[None, :], axis=1)
    geo_change = (rng_cur - base_cur) - (rng_prev - base_prev)

    sub = GnssEpoch(
        t=epoch_cur.t,
        sats=epoch_cur.sats[ic],
        sat_pos=epoch_cur.sat_pos[ic],
        sd_range=(epoch_cur.sd_range[ic] - epoch_prev.sd_range[ip]) - geo_change,
        sd_phase=(epoch_cur.sd_phase[ic] - epoch_prev.sd_phase[ip]) - geo_change,
        wavelength=epoch_cur.wavelength[ic],
        elevation=epoch_cur.elevation[ic],
    )
    flt, _x = float_solution(sub, x_prev, x_prev, cfg)
    dd, dd_cov, _D, ref = sd_to_dd(flt.ambiguities, flt.cov[4:, 4:],
                                   sub.elevation)
    ar = resolve_ambiguities(dd, dd_cov, cfg.ratio_threshold,
                             max_nodes=cfg.search_max_nodes)
    if not ar.fixed or ar.candidates.shape[0] == 0:
        return SlipReport({}, suspect_all=False, fixed=False, ratio=ar.ratio)
    dd_fix = ar.candidates[0]

    # minimal-cardinality attribution: the most common DD value belongs to
    # the reference satellite (zero preferred on ties)
    values, counts = np.unique(dd_fix, return_counts=True)
    order = sorted(range(len(values)),
                   key=lambda i: (-counts[i], values[i] != 0, abs(values[i])))
    ref_slip = -int(values[order[0]])
    slips = {}
    if ref_slip != 0:
        slips[int(sub.sats[ref])] = ref_slip
    row = 0
    for j in range(sub.n_sats):
        if j == ref:
            continue
        s = int(dd_fix[row]) + ref_slip
        if s != 0:
            slips[int(sub.sats[j])] = s
        row += 1
    return SlipReport(slips, suspect_all=False, fixed=True, ratio=ar.ratio)


class RtkEngine:
    """Per-receiver epoch processor with the previous-epoch slip cache."""

    def __init__(self, x_base, cfg=None):
        self.cfg = cfg or RtkConfig()
        self.x_base = np.asarray(x_base, dtype=float)
        self._prev_epoch = None
        self._prev_pos = None

    def process(self, epoch, x_prior=None, ins_pos=None, ins_var=None):
        """Returns (RtkSolution, SlipReport or None)."""
        prior = x_prior if x_prior is not None else (
            self._prev_pos if self._prev_pos is not None else self.x_base)
        solution = solve_epoch(epoch, prior, self.x_base, self.cfg,
                               ins_pos=ins_pos, ins_var=ins_var)
        slips = None
        if self._prev_epoch is not None:
            try:
                slips = detect_cycle_slips(self._prev_epoch, epoch,
                                           self._prev_pos, self.x_base, self.cfg)
            except GeometryError:
                slips = SlipReport({}, suspect_all=True, fixed=False, ratio=0.0)
        self._prev_epoch = epoch
        self._prev_pos = solution.position_ecef
        return solution, slips
