"""LiDAR localization against the grid map.

Heading is refined first by Gauss-Newton image registration of the online
intensity raster against the map raster (forwards-additive formulation,
coarse-to-fine pyramid); only the rotation component is kept.  The
horizontal offset is then estimated with a histogram filter over integer
cell offsets: a drift-diffusion prediction, a measurement likelihood that
adaptively blends variance-weighted intensity SSD with altitude SSD, a
KL-tempered posterior, and a weighted-mean peak extraction with a
posterior-derived covariance.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import LocalizationError, MapError
from .gridmap import Pose, rasterize_online


@dataclass
class HeadingConfig:
    pyramid_levels: int = 3
    max_iterations: int = 30
    tolerance: float = 1e-4          # rad, convergence on the rotation step
    min_overlap: float = 0.25
    raster_factor: int = 4           # heading raster cell = factor * map cell
    smooth_sigma: float = 1.0        # px, pre-smoothing per pyramid level
    max_rotation: float = 0.35       # rad, sanity cap on the recovered angle


@dataclass
class LidarLocConfig:
    window_half_width: int = 20      # cells; search window is (2W+1)^2
    alpha: float = math.e            # likelihood smoothness base
    lam: float = 2.0                 # altitude SSD scale
    beta: float = 2.0                # exponent in variances / optimal offset
    kappa_max: float = 100.0
    peak_ratio: float = 0.95
    peak_area: int = 5               # side of the squared area around the peak
    n_min: int = 200                 # minimum valid online cells
    eps_floor: float = 1e-12         # likelihood floor for empty overlap
    sigma_predict: float = 0.08      # m, drift rate between frames
    gamma_mode: str = "adaptive"     # adaptive | fixed | intensity
    gamma_fixed: float = 0.5
    heading_enabled: bool = True
    heading: HeadingConfig = field(default_factory=HeadingConfig)

    @property
    def window_size(self):
        return 2 * self.window_half_width + 1


@dataclass
class HistogramPosterior:
    """Discrete belief over integer cell offsets around a continuous center."""

    center: np.ndarray          # (2,) map coordinates of zero offset
    probs: np.ndarray           # (2W+1, 2W+1), axis 0 = x offset
    resolution: float
    degraded: bool = False

    @classmethod
    def uniform(cls, center, half_width, resolution):
        n = 2 * half_width + 1
        probs = np.full((n, n), 1.0 / (n * n))
        return cls(np.asarray(center, dtype=float), probs, resolution)

    @property
    def half_width(self):
        return (self.probs.shape[0] - 1) // 2

    def offsets(self):
        w = self.half_width
        return np.arange(-w, w + 1)

    def normalized(self):
        total = self.probs.sum()
        if total <= 0.0 or not np.isfinite(total):
            raise LocalizationError("degenerate posterior: non-positive mass")
        return replace(self, probs=self.probs / total)


@dataclass
class LidarFix:
    x: float
    y: float
    alt: float
    heading: float
    cov_xy: np.ndarray
    degraded: bool = False
    gamma: float = float("nan")
    kappa: float = float("nan")


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def _shift_kernel(n, frac, sigma_cells):
    """Row-normalized 1-D Gaussian kernel with a fractional mean shift.

    K[u, i] couples output offset u to input offset i; row normalization
    keeps a uniform belief exactly uniform on the finite window.  Exponents
    are shifted per row so narrow kernels cannot underflow to zero rows.
    """
    idx = np.arange(n, dtype=float)
    d = idx[:, None] - idx[None, :] - frac
    e = 0.5 * (d / sigma_cells) ** 2
    k = np.exp(-(e - e.min(axis=1, keepdims=True)))
    return k / k.sum(axis=1, keepdims=True)


def _integer_shift(probs, ni, nj):
    """Shift array content by whole cells, zero-filling exposed regions."""
    out = np.zeros_like(probs)
    n = probs.shape[0]
    src_i = slice(max(0, -ni), min(n, n - ni))
    dst_i = slice(max(0, ni), min(n, n + ni))
    src_j = slice(max(0, -nj), min(n, n - nj))
    dst_j = slice(max(0, nj), min(n, n + nj))
    out[dst_i, dst_j] = probs[src_i, src_j]
    return out


def predict(posterior, displacement, sigma, new_center=None):
    """Drift-diffusion prediction of the belief.

    ``displacement`` is the dead-reckoned motion since the last frame in map
    meters and ``sigma`` the drift scale (meters).  By default the window
    center rides along with the displacement and the belief only diffuses;
    if ``new_center`` is given (e.g. after an external correction), the
    content is counter-shifted so it stays attached to world positions,
    with the sub-cell remainder carried into the kernel mean.
    """
    if sigma < 0.0:
        raise LocalizationError("prediction sigma must be non-negative")
    post = posterior.normalized()
    res = post.resolution
    displacement = np.asarray(displacement, dtype=float)
    if new_center is None:
        new_center = post.center + displacement
        shift = np.zeros(2)
    else:
        new_center = np.asarray(new_center, dtype=float)
        shift = (displacement - (new_center - post.center)) / res

    w = post.half_width
    if np.any(np.abs(shift) > w):
        uniform = HistogramPosterior.uniform(new_center, w, res)
        uniform.degraded = True
        return uniform

    n_i = int(np.round(shift[0]))
    n_j = int(np.round(shift[1]))
    frac = shift - np.array([n_i, n_j])
    probs = _integer_shift(post.probs, n_i, n_j)

    sigma_cells = sigma / res
    if sigma_cells > 1e-9:
        n = probs.shape[0]
        kx = _shift_kernel(n, frac[0], sigma_cells)
        ky = _shift_kernel(n, frac[1], sigma_cells)
        probs = kx @ probs @ ky.T
    # with a near-zero kernel the fractional remainder collapses to the
    # nearest cell, which the integer shift above already applied
    total = probs.sum()
    if total <= 0.0:
        uniform = HistogramPosterior.uniform(new_center, w, res)
        uniform.degraded = True
        return uniform
    return HistogramPosterior(new_center, probs / total, res, post.degraded)


# ---------------------------------------------------------------------------
# Measurement likelihood
# ---------------------------------------------------------------------------

@dataclass
class LikelihoodFields:
    ssd_r: np.ndarray      # variance-weighted intensity SSD per offset
    ssd_a: np.ndarray      # altitude SSD per offset
    n_co: np.ndarray       # co-occupied cell count per offset
    p_r: np.ndarray        # normalized intensity likelihood
    p_a: np.ndarray        # normalized altitude likelihood
    gamma: float
    combined: np.ndarray   # normalized blended likelihood


def _exp_normalize(log_unnorm, valid, eps_floor):
    """Shift-exponentiate-normalize, flooring invalid offsets."""
    out = np.full(log_unnorm.shape, np.nan)
    if not valid.any():
        raise LocalizationError("insufficient overlap: no offset has co-occupied cells")
    peak = log_unnorm[valid].max()
    out[valid] = np.exp(log_unnorm[valid] - peak)
    out[~valid] = eps_floor
    return out / out.sum()


def ssd_fields(online, lidar_map, half_width):
    """Intensity and altitude SSD plus co-occupancy count for every offset."""
    w = half_width
    cells = online.cells
    ci0 = int(cells[:, 0].min()) - w
    cj0 = int(cells[:, 1].min()) - w
    ni = int(cells[:, 0].max()) + w + 1 - ci0
    nj = int(cells[:, 1].max()) + w + 1 - cj0
    occ, m_imean, m_ivar, m_amean, _ = lidar_map.window(ci0, cj0, ni, nj)

    base = (cells[:, 0] - ci0) * nj + (cells[:, 1] - cj0)
    off = np.arange(-w, w + 1)
    d_flat = (off[:, None] * nj + off[None, :]).reshape(-1)   # (n_off,)
    idx = base[None, :] + d_flat[:, None]                      # (n_off, n_z)

    occ_g = occ.reshape(-1)[idx]
    im_g = m_imean.reshape(-1)[idx]
    iv_g = m_ivar.reshape(-1)[idx]
    am_g = m_amean.reshape(-1)[idx]

    zi = online.i_mean[None, :]
    zv = online.i_var[None, :]
    za = online.a_mean[None, :]

    iv_safe = np.where(occ_g, iv_g, 1.0)
    weight = (iv_safe + zv) / (iv_safe * zv)
    terms_r = np.where(occ_g, (im_g - zi) ** 2 * weight, 0.0)
    terms_a = np.where(occ_g, (am_g - za) ** 2, 0.0)

    n = 2 * w + 1
    ssd_r = terms_r.sum(axis=1).reshape(n, n)
    ssd_a = terms_a.sum(axis=1).reshape(n, n)
    n_co = occ_g.sum(axis=1).reshape(n, n)
    return ssd_r, ssd_a, n_co


def weighted_axis_variances(p, beta):
    """Spread of a window distribution about its center of mass, per axis.

    Both the center of mass and the spread use the beta-powered weights.
    Offsets are in cells.
    """
    w = (p.shape[0] - 1) // 2
    off = np.arange(-w, w + 1, dtype=float)
    pw = np.power(np.maximum(p, 0.0), beta)
    total = pw.sum()
    if total <= 0.0:
        return 0.0, 0.0
    xs = pw.sum(axis=1)
    ys = pw.sum(axis=0)
    xbar = (xs * off).sum() / total
    ybar = (ys * off).sum() / total
    var_x = (xs * (off - xbar) ** 2).sum() / total
    var_y = (ys * (off - ybar) ** 2).sum() / total
    return float(var_x), float(var_y)


def adaptive_gamma(p_r, p_a, beta, floor=1e-12):
    """Blend weight from the axis-variance products of the two cue likelihoods."""
    vxr, vyr = weighted_axis_variances(p_r, beta)
    vxa, vya = weighted_axis_variances(p_a, beta)
    prod_r = max(vxr * vyr, floor)
    prod_a = max(vxa * vya, floor)
    return prod_a / (prod_a + prod_r)


def measurement_likelihood(online, lidar_map, config):
    """Per-offset likelihood arrays for both cues plus the blend weight."""
    if online.n_z <= config.n_min:
        raise LocalizationError(
            f"insufficient overlap: {online.n_z} valid cells <= {config.n_min}")
    ssd_r, ssd_a, n_co = ssd_fields(online, lidar_map, config.window_half_width)
    valid = n_co > 0
    ln_alpha = math.log(config.alpha)
    scale = ln_alpha / (2.0 * online.n_z)
    p_r = _exp_normalize(-ssd_r * scale, valid, config.eps_floor)
    p_a = _exp_normalize(-ssd_a * config.lam * scale, valid, config.eps_floor)

    if config.gamma_mode == "adaptive":
        gamma = adaptive_gamma(p_r, p_a, config.beta)
    elif config.gamma_mode == "fixed":
        gamma = config.gamma_fixed
    elif config.gamma_mode == "intensity":
        gamma = 1.0
    else:
        raise LocalizationError(f"unknown gamma mode {config.gamma_mode!r}")

    log_combined = gamma * np.log(np.maximum(p_r, 1e-300)) \
        + (1.0 - gamma) * np.log(np.maximum(p_a, 1e-300))
    combined = np.exp(log_combined - log_combined.max())
    combined = combined / combined.sum()
    return LikelihoodFields(ssd_r, ssd_a, n_co, p_r, p_a, float(gamma), combined)


# ---------------------------------------------------------------------------
# Posterior update and estimate extraction
# ---------------------------------------------------------------------------

def kl_divergence(p, q):
    """KL(p || q) over a common window, ignoring zero-probability p cells."""
    p = p / p.sum()
    q = np.maximum(q / q.sum(), 1e-300)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def posterior_update(predicted, likelihood, config):
    """Blend likelihood with the KL-tempered prediction."""
    if likelihood.shape != predicted.probs.shape:
        raise LocalizationError("likelihood window does not match the prediction")
    prior = predicted.normalized().probs
    like = likelihood / likelihood.sum()
    kappa = kl_divergence(like, prior)
    kappa = min(max(kappa, 1.0), config.kappa_max)
    log_post = np.log(np.maximum(like, 1e-300)) + np.log(np.maximum(prior, 1e-300)) / kappa
    post = np.exp(log_post - log_post.max())
    post = post / post.sum()
    return replace(predicted, probs=post), kappa


def _select_peak(probs, ratio):
    """Largest-belief cell, or the runner-up if it is comparably strong and
    closer to the window center."""
    n = probs.shape[0]
    w = (n - 1) // 2
    flat = probs.reshape(-1)
    order = np.argsort(flat)
    i1 = int(order[-1])
    p1 = flat[i1]
    best = np.unravel_index(i1, probs.shape)
    if order.size > 1:
        i2 = int(order[-2])
        p2 = flat[i2]
        second = np.unravel_index(i2, probs.shape)
        d1 = (best[0] - w) ** 2 + (best[1] - w) ** 2
        d2 = (second[0] - w) ** 2 + (second[1] - w) ** 2
        if p2 >= ratio * p1 and d2 < d1:
            return second
    return best


def extract_estimate(posterior, config):
    """Weighted-mean offset around the selected peak plus window covariance.

    Returns offsets in cells: (offset_xy, cov_cells, degraded).
    """
    post = posterior.normalized()
    probs = post.probs
    n = probs.shape[0]
    w = post.half_width
    spread = probs.max() - probs.min()
    if spread < 1e-15:
        cov = np.eye(2) * (w ** 2) / 3.0
        return np.zeros(2), cov, True

    pi, pj = _select_peak(probs, config.peak_ratio)
    half_area = config.peak_area // 2
    i0, i1 = max(0, pi - half_area), min(n, pi + half_area + 1)
    j0, j1 = max(0, pj - half_area), min(n, pj + half_area + 1)
    area = probs[i0:i1, j0:j1]
    aw = np.power(area, config.beta)
    off = np.arange(-w, w + 1, dtype=float)
    ox = off[i0:i1]
    oy = off[j0:j1]
    denom = aw.sum()
    est = np.array([
        (aw.sum(axis=1) * ox).sum() / denom,
        (aw.sum(axis=0) * oy).sum() / denom,
    ])

    pw = np.power(probs, config.beta)
    pw_total = pw.sum()
    dx = off[:, None] - est[0]
    dy = off[None, :] - est[1]
    cxx = (pw * dx * dx).sum() / pw_total
    cyy = (pw * dy * dy).sum() / pw_total
    cxy = (pw * dx * dy).sum() / pw_total
    cov = np.array([[cxx, cxy], [cxy, cyy]])

    # floor eigenvalues at the single-cell quantization variance
    floor = 1.0 / 12.0
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, floor)
    cov = evecs @ np.diag(evals) @ evecs.T
    return est, cov, False


# ---------------------------------------------------------------------------
# Heading estimation (forwards-additive Gauss-Newton registration)
# ---------------------------------------------------------------------------

@dataclass
class RasterGrid:
    """Common pixel lattice for the heading rasters.

    Pixel (0, 0) covers the world square starting at ``origin_cell *
    resolution``; pixel centers sit at ``(origin_cell + k + 0.5) * res``.
    """

    origin_cell: tuple
    shape: tuple
    resolution: float

    @classmethod
    def covering(cls, bounds, resolution):
        (x0, x1), (y0, y1) = bounds
        ci0 = int(np.floor(x0 / resolution))
        cj0 = int(np.floor(y0 / resolution))
        ni = int(np.floor(x1 / resolution)) - ci0 + 1
        nj = int(np.floor(y1 / resolution)) - cj0 + 1
        return cls((ci0, cj0), (ni, nj), resolution)

    def world_to_px(self, x, y):
        return (x / self.resolution - self.origin_cell[0] - 0.5,
                y / self.resolution - self.origin_cell[1] - 0.5)


def raster_from_points(xy, intensity, grid):
    """Per-pixel mean intensity of points binned onto the grid."""
    ci = np.floor(xy[:, 0] / grid.resolution).astype(np.int64) - grid.origin_cell[0]
    cj = np.floor(xy[:, 1] / grid.resolution).astype(np.int64) - grid.origin_cell[1]
    ni, nj = grid.shape
    keep = (ci >= 0) & (ci < ni) & (cj >= 0) & (cj < nj)
    ci, cj = ci[keep], cj[keep]
    img = np.zeros((ni, nj))
    cnt = np.zeros((ni, nj))
    np.add.at(img, (ci, cj), intensity[keep])
    np.add.at(cnt, (ci, cj), 1.0)
    occupied = cnt > 0
    img[occupied] /= cnt[occupied]
    return img, occupied


def raster_from_map(lidar_map, grid, factor):
    """Block-averaged map intensity on the same coarse grid."""
    ni, nj = grid.shape
    ci0 = grid.origin_cell[0] * factor
    cj0 = grid.origin_cell[1] * factor
    occ, i_mean, _, _, _ = lidar_map.window(ci0, cj0, ni * factor, nj * factor)
    vals = np.where(occ, i_mean, 0.0)
    blocks_v = vals.reshape(ni, factor, nj, factor).sum(axis=(1, 3))
    blocks_n = occ.reshape(ni, factor, nj, factor).sum(axis=(1, 3)).astype(float)
    filled = blocks_n > 0
    img = np.zeros((ni, nj))
    img[filled] = blocks_v[filled] / blocks_n[filled]
    return img, filled


def _smoothed(values, occupied, sigma):
    """Occupancy-weighted Gaussian smoothing; returns (values, validity)."""
    w = occupied.astype(float)
    v = ndimage.gaussian_filter(values * w, sigma, mode="constant")
    ww = ndimage.gaussian_filter(w, sigma, mode="constant")
    valid = ww > 0.2
    out = np.zeros_like(v)
    out[valid] = v[valid] / ww[valid]
    return out, valid


def _downsample(values, valid):
    ni, nj = values.shape
    ni2, nj2 = ni // 2, nj // 2
    v = values[: ni2 * 2, : nj2 * 2].reshape(ni2, 2, nj2, 2)
    m = valid[: ni2 * 2, : nj2 * 2].reshape(ni2, 2, nj2, 2)
    cnt = m.sum(axis=(1, 3)).astype(float)
    out = np.zeros((ni2, nj2))
    ok = cnt > 0
    out[ok] = (v * m).sum(axis=(1, 3))[ok] / cnt[ok]
    return out, cnt >= 2


@dataclass
class HeadingResult:
    rotation: float      # rad to add to the heading used for the template
    converged: bool
    overlap: float
    iterations: int


def _lk_level(template, t_valid, image, i_valid, center, theta, trans, cfg):
    """Gauss-Newton iterations for one pyramid level."""
    gx, gy = np.gradient(image)   # central differences along x and y axes
    pi, pj = np.nonzero(t_valid)
    tvals = template[pi, pj]
    p = np.stack([pi.astype(float), pj.astype(float)], axis=1) - center
    ni, nj = image.shape

    converged = False
    iterations = 0
    overlap = 0.0
    for _ in range(cfg.max_iterations):
        iterations += 1
        c, s = np.cos(theta), np.sin(theta)
        # warp matches the heading convention: rotating the template content
        # by +theta about the vehicle, in (east, north) pixel axes
        wx = c * p[:, 0] + s * p[:, 1] + center[0] + trans[0]
        wy = -s * p[:, 0] + c * p[:, 1] + center[1] + trans[1]
        x0 = np.floor(wx).astype(int)
        y0 = np.floor(wy).astype(int)
        inb = (x0 >= 0) & (x0 < ni - 1) & (y0 >= 0) & (y0 < nj - 1)
        if not inb.any():
            return theta, trans, False, 0.0, iterations
        xs, ys = x0[inb], y0[inb]
        fx = wx[inb] - xs
        fy = wy[inb] - ys
        ok = i_valid[xs, ys] & i_valid[xs + 1, ys] & i_valid[xs, ys + 1] \
            & i_valid[xs + 1, ys + 1]
        overlap = ok.sum() / max(len(p), 1)
        if overlap < cfg.min_overlap:
            return theta, trans, False, overlap, iterations
        sel = np.nonzero(inb)[0][ok]
        xs, ys, fx, fy = xs[ok], ys[ok], fx[ok], fy[ok]

        def bilerp(a):
            return (a[xs, ys] * (1 - fx) * (1 - fy) + a[xs + 1, ys] * fx * (1 - fy)
                    + a[xs, ys + 1] * (1 - fx) * fy + a[xs + 1, ys + 1] * fx * fy)

        iw = bilerp(image)
        gxw = bilerp(gx)
        gyw = bilerp(gy)
        err = iw - tvals[sel]
        dwx = -s * p[sel, 0] + c * p[sel, 1]
        dwy = -c * p[sel, 0] - s * p[sel, 1]
        j_theta = gxw * dwx + gyw * dwy
        J = np.stack([j_theta, gxw, gyw], axis=1)
        H = J.T @ J
        g = J.T @ err
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return theta, trans, False, overlap, iterations
        theta -= step[0]
        trans = (trans[0] - step[1], trans[1] - step[2])
        if abs(step[0]) < cfg.tolerance:
            converged = True
            break
    return theta, trans, converged, overlap, iterations


def lk_rotation(online_img, online_occ, map_img, map_occ, center_px, cfg=None):
    """Rotation of the online raster relative to the map raster.

    Both rasters must share one pixel lattice; ``center_px`` is the rotation
    center (the vehicle) in pixel coordinates.  Translation is estimated as
    a nuisance parameter and discarded.  Positive rotation means the true
    heading exceeds the one used to build the online raster.
    """
    cfg = cfg or HeadingConfig()
    t_vals, t_valid = _smoothed(online_img, online_occ, cfg.smooth_sigma)
    i_vals, i_valid = _smoothed(map_img, map_occ, cfg.smooth_sigma)
    levels = [(t_vals, t_valid, i_vals, i_valid, np.asarray(center_px, dtype=float))]
    for _ in range(cfg.pyramid_levels - 1):
        t_vals, t_valid = _downsample(t_vals, t_valid)
        i_vals, i_valid = _downsample(i_vals, i_valid)
        levels.append((t_vals, t_valid, i_vals, i_valid,
                       (levels[-1][4] - 0.5) / 2.0))

    theta = 0.0
    trans = (0.0, 0.0)
    converged = False
    overlap = 0.0
    total_iters = 0
    for li, (tv, tm, iv, im, ctr) in enumerate(reversed(levels)):
        if not tm.any() or not im.any():
            continue
        theta, trans, converged, overlap, iters = _lk_level(
            tv, tm, iv, im, ctr, theta, trans, cfg)
        total_iters += iters
        if li < len(levels) - 1:
            trans = (trans[0] * 2.0, trans[1] * 2.0)
    if overlap < cfg.min_overlap:
        raise LocalizationError(f"insufficient overlap for heading: {overlap:.2f}")
    if abs(theta) > cfg.max_rotation:
        converged = False
        theta = 0.0
    return HeadingResult(theta, converged, float(overlap), total_iters)


def estimate_heading(scan_points, prior_pose, lidar_map, cfg, search_margin=3.0):
    """Refined heading from scan-vs-map registration, prior on failure."""
    hcfg = cfg.heading
    res = lidar_map.resolution * hcfg.raster_factor
    body = np.asarray(scan_points, dtype=float)
    pose = Pose(prior_pose.x, prior_pose.y, prior_pose.alt,
                prior_pose.roll, prior_pose.pitch, prior_pose.heading)
    world = body[:, 0:3] @ pose.rotation().T + pose.translation()
    xy = world[:, 0:2]
    bounds = ((xy[:, 0].min() - search_margin, xy[:, 0].max() + search_margin),
              (xy[:, 1].min() - search_margin, xy[:, 1].max() + search_margin))
    grid = RasterGrid.covering(bounds, res)
    online_img, online_occ = raster_from_points(xy, body[:, 3], grid)
    map_img, map_occ = raster_from_map(lidar_map, grid, hcfg.raster_factor)
    center = grid.world_to_px(prior_pose.x, prior_pose.y)
    result = lk_rotation(online_img, online_occ, map_img, map_occ, center, hcfg)
    if not result.converged:
        return prior_pose.heading, False
    return prior_pose.heading + result.rotation, True


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def localize(lidar_map, scan_points, prior_pose, config=None, predicted=None):
    """Run the full matching chain for one scan.

    Returns ``(LidarFix, HistogramPosterior)``.  ``predicted`` is the belief
    carried over from the previous frame after prediction; a uniform belief
    over the search window is used when absent.
    """
    config = config or LidarLocConfig()
    degraded = False

    if config.heading_enabled:
        try:
            heading, ok = estimate_heading(scan_points, prior_pose, lidar_map, config)
        except LocalizationError:
            heading, ok = prior_pose.heading, False
        degraded |= not ok
    else:
        heading = prior_pose.heading

    try:
        alt0 = lidar_map.altitude_at(prior_pose.x, prior_pose.y)
    except MapError:
        alt0 = prior_pose.alt
        degraded = True

    pose = Pose(prior_pose.x, prior_pose.y, alt0,
                prior_pose.roll, prior_pose.pitch, heading)
    online = rasterize_online(scan_points, pose, lidar_map.config)

    fields = measurement_likelihood(online, lidar_map, config)

    if predicted is None:
        predicted = HistogramPosterior.uniform(
            (prior_pose.x, prior_pose.y), config.window_half_width,
            lidar_map.resolution)
    elif predicted.probs.shape != fields.combined.shape:
        raise LocalizationError("carried posterior does not match the window size")
    posterior, kappa = posterior_update(predicted, fields.combined, config)

    est_cells, cov_cells, flat = extract_estimate(posterior, config)
    degraded |= flat or posterior.degraded
    res = lidar_map.resolution
    x_hat = posterior.center[0] + est_cells[0] * res
    y_hat = posterior.center[1] + est_cells[1] * res
    try:
        alt = lidar_map.altitude_at(x_hat, y_hat)
    except MapError:
        alt = alt0
        degraded = True
    fix = LidarFix(float(x_hat), float(y_hat), float(alt), float(heading),
                   cov_cells * res * res, degraded, fields.gamma, kappa)
    return fix, posterior


class LidarLocalizer:
    """Stateful frame-to-frame wrapper carrying the histogram belief."""

    def __init__(self, lidar_map, config=None):
        self.map = lidar_map
        self.config = config or LidarLocConfig()
        self.posterior = None

    def process(self, scan_points, prior_pose, displacement=None, sigma=None):
        """Localize one scan; ``displacement`` is dead-reckoned motion since
        the previous frame in map meters."""
        predicted = None
        if self.posterior is not None and displacement is not None:
            predicted = predict(self.posterior, displacement,
                                sigma if sigma is not None else self.config.sigma_predict,
                                new_center=np.array([prior_pose.x, prior_pose.y]))
        fix, self.posterior = localize(self.map, scan_points, prior_pose,
                                       self.config, predicted)
        return fix
