"""Shared builders for localization tests: dense synthetic maps and scans."""

import numpy as np

from navfuse.gridmap import GridConfig, LidarMap, MapTile, OnlineGrid, Pose


def map_from_fields(i_mean, i_var, a_mean, a_var, occupied=None,
                    resolution=0.125, origin_cell=(0, 0)):
    """Build a single-tile map directly from dense field arrays.

    Array index [i, j] corresponds to world cell (origin_cell + (i, j)).
    The tile dimension is the smallest power of two covering the fields.
    """
    i_mean = np.asarray(i_mean, dtype=float)
    nx, ny = i_mean.shape
    if occupied is None:
        occupied = np.ones((nx, ny), dtype=bool)
    dim = 1
    hi = max(origin_cell[0] + nx, origin_cell[1] + ny, 1)
    lo = min(origin_cell[0], origin_cell[1], 0)
    while dim < hi or -dim > lo:
        dim *= 2
    cfg = GridConfig(resolution=resolution, tile_dim=dim)

    tiles = {}

    def tile_of(c):
        return (c[0] // dim, c[1] // dim)

    cells_i, cells_j = np.nonzero(occupied)
    world_i = cells_i + origin_cell[0]
    world_j = cells_j + origin_cell[1]
    for key in {(int(a // dim), int(b // dim)) for a, b in zip(world_i, world_j)}:
        shape = (dim, dim)
        tiles[key] = MapTile(key, resolution, dim,
                             np.zeros(shape, dtype=np.uint32),
                             np.zeros(shape, dtype=np.float32),
                             np.zeros(shape, dtype=np.float32),
                             np.zeros(shape, dtype=np.float32),
                             np.zeros(shape, dtype=np.float32))
    for ii, jj, li, lj in zip(world_i, world_j, cells_i, cells_j):
        key = tile_of((ii, jj))
        t = tiles[key]
        a, b = ii - key[0] * dim, jj - key[1] * dim
        t.count[a, b] = 5
        t.i_mean[a, b] = i_mean[li, lj]
        t.i_var[a, b] = np.asarray(i_var, dtype=float)[li, lj] \
            if np.ndim(i_var) else i_var
        t.a_mean[a, b] = np.asarray(a_mean, dtype=float)[li, lj] \
            if np.ndim(a_mean) else a_mean
        t.a_var[a, b] = np.asarray(a_var, dtype=float)[li, lj] \
            if np.ndim(a_var) else a_var
    return LidarMap(cfg, tiles)


def online_from_cells(cells, i_mean, a_mean, i_var=1.0, resolution=0.125,
                      pose=None):
    cells = np.asarray(cells, dtype=np.int64)
    n = cells.shape[0]
    return OnlineGrid(
        cells=cells,
        i_mean=np.asarray(i_mean, dtype=float),
        i_var=np.full(n, i_var) if np.ndim(i_var) == 0 else np.asarray(i_var),
        a_mean=np.asarray(a_mean, dtype=float),
        counts=np.ones(n, dtype=np.int64),
        pose=pose or Pose(0.0, 0.0, 0.0),
        resolution=resolution,
    )


def smooth_texture(shape, rng, corr_cells=8.0, mean=120.0, sd=35.0, clip=None):
    from scipy import ndimage
    noise = rng.standard_normal(shape)
    field = ndimage.gaussian_filter(noise, corr_cells, mode="wrap")
    field = field / field.std()
    out = mean + sd * field
    if clip is not None:
        out = np.clip(out, *clip)
    return out


def fourier_texture(rng, n_modes=40, scale=30.0, mean=120.0, sd=38.0):
    """Analytic band-limited field evaluable at arbitrary coordinates."""
    kx = rng.uniform(-1.0, 1.0, n_modes) / scale * 2.0 * np.pi
    ky = rng.uniform(-1.0, 1.0, n_modes) / scale * 2.0 * np.pi
    phase = rng.uniform(0.0, 2.0 * np.pi, n_modes)
    amp = rng.uniform(0.5, 1.0, n_modes)
    norm = np.sqrt(0.5 * np.sum(amp ** 2))

    def field(x, y):
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        v = np.sum(amp * np.cos(kx * x + ky * y + phase), axis=-1) / norm
        return mean + sd * v

    return field


def scan_from_map(lidar_map, true_pose, radius=15.0, rng=None, noise_i=0.0,
                  noise_a=0.0, sparsity=1.0):
    """Noise-free (by default) body-frame points sampled off map cells."""
    res = lidar_map.resolution
    c0 = lidar_map.cell_of(true_pose.x, true_pose.y)
    r_cells = int(np.ceil(radius / res))
    occ, i_mean, _, a_mean, _ = lidar_map.window(
        c0[0] - r_cells, c0[1] - r_cells, 2 * r_cells + 1, 2 * r_cells + 1)
    ii, jj = np.nonzero(occ)
    dist2 = (ii - r_cells) ** 2 + (jj - r_cells) ** 2
    keep = dist2 <= (radius / res) ** 2
    ii, jj = ii[keep], jj[keep]
    if rng is not None and sparsity < 1.0:
        sel = rng.random(ii.size) < sparsity
        ii, jj = ii[sel], jj[sel]
    wx = (c0[0] - r_cells + ii + 0.5) * res
    wy = (c0[1] - r_cells + jj + 0.5) * res
    wz = a_mean[ii, jj]
    vals = i_mean[ii, jj]
    if rng is not None and (noise_i > 0.0 or noise_a > 0.0):
        vals = vals + rng.normal(0.0, noise_i, vals.size)
        wz = wz + rng.normal(0.0, noise_a, wz.size)
    world = np.stack([wx, wy, wz], axis=1)
    body = (world - true_pose.translation()) @ true_pose.rotation()
    return np.concatenate([body, vals[:, None]], axis=1)
