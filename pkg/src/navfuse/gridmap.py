"""Tiled grid map of per-cell laser intensity and altitude statistics.

Cells live on a fixed world lattice: cell ``(i, j)`` covers the square
``[i*res, (i+1)*res) x [j*res, (j+1)*res)`` in projected map coordinates and
its center is ``(i + 0.5, j + 0.5) * res``.  Tiles are square blocks of
``dim x dim`` cells; tile ``(ti, tj)`` starts at cell ``(ti*dim, tj*dim)``.

Tile file format (little endian):
    magic "LMAP", version u16, resolution f64, dimension u32,
    tile index i32 x2, origin f64 x2,
    dimension^2 records of (count u32, i_mean f32, i_var f32,
                            a_mean f32, a_var f32) in C order over (i, j),
    CRC32 u32 over everything before it.
"""

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MapError
from .quat import att_to_quat, quat_to_dcm

_TILE_MAGIC = b"LMAP"
_TILE_VERSION = 1
_HEADER = struct.Struct("<4sHdIiidd")
_RECORD_DTYPE = np.dtype([
    ("count", "<u4"),
    ("i_mean", "<f4"),
    ("i_var", "<f4"),
    ("a_mean", "<f4"),
    ("a_var", "<f4"),
])


@dataclass
class GridConfig:
    resolution: float = 0.125          # m per cell
    tile_dim: int = 1024               # cells per tile side, power of two
    intensity_var_floor: float = 1.0
    altitude_var_floor: float = 0.0025  # m^2
    ground_band: tuple = (-2.0, 0.5)   # accepted z relative to local ground
    altitude_search_radius: int = 8    # cells, nearest-occupied fallback

    def __post_init__(self):
        if self.resolution <= 0.0:
            raise MapError("resolution must be positive")
        d = self.tile_dim
        if d <= 0 or (d & (d - 1)) != 0:
            raise MapError("tile dimension must be a power of two")


@dataclass
class GridCellStats:
    intensity_mean: float
    intensity_var: float
    altitude_mean: float
    altitude_var: float
    sample_count: int


@dataclass
class Pose:
    """Vehicle pose in map coordinates: translation plus attitude angles."""

    x: float
    y: float
    alt: float
    roll: float = 0.0
    pitch: float = 0.0
    heading: float = 0.0

    def rotation(self):
        return quat_to_dcm(att_to_quat(self.heading, self.pitch, self.roll))

    def translation(self):
        return np.array([self.x, self.y, self.alt])

    def is_finite(self):
        return np.all(np.isfinite([self.x, self.y, self.alt,
                                   self.roll, self.pitch, self.heading]))


class _AccTile:
    """Welford accumulators for one tile (float64 during accumulation)."""

    __slots__ = ("n", "i_mean", "i_m2", "a_mean", "a_m2")

    def __init__(self, dim):
        self.n = np.zeros((dim, dim), dtype=np.int64)
        self.i_mean = np.zeros((dim, dim))
        self.i_m2 = np.zeros((dim, dim))
        self.a_mean = np.zeros((dim, dim))
        self.a_m2 = np.zeros((dim, dim))


def _batch_stats(flat_ids, values, size):
    """Per-bin count, mean and sum of squared deviations for one batch."""
    count = np.zeros(size)
    total = np.zeros(size)
    np.add.at(count, flat_ids, 1.0)
    np.add.at(total, flat_ids, values)
    occupied = count > 0
    mean = np.zeros(size)
    mean[occupied] = total[occupied] / count[occupied]
    m2 = np.zeros(size)
    np.add.at(m2, flat_ids, (values - mean[flat_ids]) ** 2)
    return count, mean, m2


def _merge_welford(na, mean, m2, nb, mb, m2b, touched):
    """Chan parallel merge of batch statistics into running statistics.

    ``na`` are the pre-batch counts; the caller owns the count update.
    """
    a = na[touched].astype(float)
    b = nb[touched]
    delta = mb[touched] - mean[touched]
    ntot = a + b
    mean[touched] += delta * b / ntot
    m2[touched] += m2b[touched] + delta * delta * a * b / ntot


class MapAccumulator:
    """Single-writer accumulator building per-cell statistics from scans."""

    def __init__(self, config=None):
        self.config = config or GridConfig()
        self.tiles = {}
        self.rejected_points = 0

    def _tile(self, key):
        tile = self.tiles.get(key)
        if tile is None:
            tile = _AccTile(self.config.tile_dim)
            self.tiles[key] = tile
        return tile

    def add_world_points(self, xyz, intensity, ground_alt):
        """Accumulate points already expressed in map/world coordinates.

        Points outside the ground band around ``ground_alt`` are dropped and
        counted in ``rejected_points``, as are non-finite rows.
        """
        xyz = np.asarray(xyz, dtype=float)
        intensity = np.asarray(intensity, dtype=float)
        finite = np.isfinite(xyz).all(axis=1) & np.isfinite(intensity)
        lo, hi = self.config.ground_band
        band = (xyz[:, 2] >= ground_alt + lo) & (xyz[:, 2] <= ground_alt + hi)
        keep = finite & band
        self.rejected_points += int(np.count_nonzero(~keep))
        if not np.any(keep):
            return self
        xyz = xyz[keep]
        intensity = intensity[keep]

        res = self.config.resolution
        dim = self.config.tile_dim
        cells = np.floor(xyz[:, 0:2] / res).astype(np.int64)
        tiles = np.floor_divide(cells, dim)
        local = cells - tiles * dim
        flat = local[:, 0] * dim + local[:, 1]

        for key in {(int(ti), int(tj)) for ti, tj in np.unique(tiles, axis=0)}:
            mask = (tiles[:, 0] == key[0]) & (tiles[:, 1] == key[1])
            tile = self._tile(key)
            size = dim * dim
            ids = flat[mask]
            n_flat = tile.n.reshape(-1)
            nb, mb, m2b = _batch_stats(ids, intensity[mask], size)
            _, mb2, m2b2 = _batch_stats(ids, xyz[mask][:, 2], size)
            touched = nb > 0
            _merge_welford(n_flat, tile.i_mean.reshape(-1),
                           tile.i_m2.reshape(-1), nb, mb, m2b, touched)
            _merge_welford(n_flat, tile.a_mean.reshape(-1),
                           tile.a_m2.reshape(-1), nb, mb2, m2b2, touched)
            n_flat[touched] += nb[touched].astype(np.int64)
        return self

    def occupied_cell_count(self):
        return sum(int(np.count_nonzero(t.n)) for t in self.tiles.values())


def accumulate_scan(accumulator, points, pose):
    """Transform one sensor-frame scan with its pose and accumulate it.

    ``points`` is an (n, 4) array of (x, y, z, intensity) in the body frame.
    The pose altitude serves as the local ground estimate for the band filter.
    """
    if not pose.is_finite():
        raise MapError("pose contains non-finite values")
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 4:
        raise MapError("points must be (n, 4): x, y, z, intensity")
    world = points[:, 0:3] @ pose.rotation().T + pose.translation()
    return accumulator.add_world_points(world, points[:, 3], pose.alt)


@dataclass
class MapTile:
    tile_index: tuple
    resolution: float
    dimension: int
    count: np.ndarray    # (dim, dim) u32
    i_mean: np.ndarray   # f32
    i_var: np.ndarray
    a_mean: np.ndarray
    a_var: np.ndarray

    @property
    def origin(self):
        return (self.tile_index[0] * self.dimension * self.resolution,
                self.tile_index[1] * self.dimension * self.resolution)

    def to_bytes(self):
        header = _HEADER.pack(_TILE_MAGIC, _TILE_VERSION, self.resolution,
                              self.dimension, self.tile_index[0],
                              self.tile_index[1], *self.origin)
        rec = np.empty(self.dimension * self.dimension, dtype=_RECORD_DTYPE)
        rec["count"] = self.count.reshape(-1)
        rec["i_mean"] = self.i_mean.reshape(-1)
        rec["i_var"] = self.i_var.reshape(-1)
        rec["a_mean"] = self.a_mean.reshape(-1)
        rec["a_var"] = self.a_var.reshape(-1)
        body = header + rec.tobytes()
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < _HEADER.size + 4:
            raise MapError("tile file truncated")
        body, crc_bytes = blob[:-4], blob[-4:]
        (crc,) = struct.unpack("<I", crc_bytes)
        if crc != (zlib.crc32(body) & 0xFFFFFFFF):
            raise MapError("tile CRC mismatch")
        magic, version, res, dim, ti, tj, _ox, _oy = _HEADER.unpack_from(body)
        if magic != _TILE_MAGIC:
            raise MapError("bad tile magic")
        if version != _TILE_VERSION:
            raise MapError(f"unsupported tile version {version}")
        rec = np.frombuffer(body, dtype=_RECORD_DTYPE, offset=_HEADER.size)
        if rec.size != dim * dim:
            raise MapError("tile record count mismatch")
        shape = (dim, dim)
        return cls((ti, tj), res, dim,
                   rec["count"].reshape(shape).copy(),
                   rec["i_mean"].reshape(shape).copy(),
                   rec["i_var"].reshape(shape).copy(),
                   rec["a_mean"].reshape(shape).copy(),
                   rec["a_var"].reshape(shape).copy())


class LidarMap:
    """Immutable set of finalized tiles; safe for concurrent readers."""

    def __init__(self, config, tiles):
        self.config = config
        self.tiles = tiles

    @property
    def resolution(self):
        return self.config.resolution

    def cell_of(self, x, y):
        res = self.config.resolution
        return int(np.floor(x / res)), int(np.floor(y / res))

    def cell_center(self, ci, cj):
        res = self.config.resolution
        return (ci + 0.5) * res, (cj + 0.5) * res

    def _lookup(self, ci, cj):
        dim = self.config.tile_dim
        key = (ci // dim, cj // dim)
        tile = self.tiles.get(key)
        if tile is None:
            return None, 0, 0
        return tile, ci - key[0] * dim, cj - key[1] * dim

    def query(self, x, y):
        """Statistics of the cell containing (x, y), or None if empty."""
        tile, li, lj = self._lookup(*self.cell_of(x, y))
        if tile is None or tile.count[li, lj] == 0:
            return None
        return GridCellStats(
            float(tile.i_mean[li, lj]), float(tile.i_var[li, lj]),
            float(tile.a_mean[li, lj]), float(tile.a_var[li, lj]),
            int(tile.count[li, lj]))

    def altitude_at(self, x, y):
        """Altitude of the containing cell, else nearest occupied neighbor."""
        stats = self.query(x, y)
        if stats is not None:
            return stats.altitude_mean
        ci, cj = self.cell_of(x, y)
        rad = self.config.altitude_search_radius
        occ, a_mean = self.window(ci - rad, cj - rad,
                                  2 * rad + 1, 2 * rad + 1,
                                  fields=("occ", "a_mean"))
        if not occ.any():
            raise MapError("altitude unavailable: no occupied cell in range")
        ii, jj = np.nonzero(occ)
        d2 = (ii - rad) ** 2 + (jj - rad) ** 2
        best = int(np.argmin(d2))
        return float(a_mean[ii[best], jj[best]])

    def window(self, ci0, cj0, ni, nj, fields=("occ", "i_mean", "i_var", "a_mean", "a_var")):
        """Dense float64 field arrays over a rectangle of world cells."""
        out = {
            "occ": np.zeros((ni, nj), dtype=bool),
            "i_mean": np.zeros((ni, nj)),
            "i_var": np.full((ni, nj), np.inf),
            "a_mean": np.zeros((ni, nj)),
            "a_var": np.full((ni, nj), np.inf),
        }
        dim = self.config.tile_dim
        t0 = (ci0 // dim, cj0 // dim)
        t1 = ((ci0 + ni - 1) // dim, (cj0 + nj - 1) // dim)
        for ti in range(t0[0], t1[0] + 1):
            for tj in range(t0[1], t1[1] + 1):
                tile = self.tiles.get((ti, tj))
                if tile is None:
                    continue
                gi0 = max(ci0, ti * dim)
                gi1 = min(ci0 + ni, (ti + 1) * dim)
                gj0 = max(cj0, tj * dim)
                gj1 = min(cj0 + nj, (tj + 1) * dim)
                if gi0 >= gi1 or gj0 >= gj1:
                    continue
                src = (slice(gi0 - ti * dim, gi1 - ti * dim),
                       slice(gj0 - tj * dim, gj1 - tj * dim))
                dst = (slice(gi0 - ci0, gi1 - ci0), slice(gj0 - cj0, gj1 - cj0))
                occ = tile.count[src] > 0
                out["occ"][dst] = occ
                out["i_mean"][dst] = np.where(occ, tile.i_mean[src], 0.0)
                out["i_var"][dst] = np.where(occ, tile.i_var[src], np.inf)
                out["a_mean"][dst] = np.where(occ, tile.a_mean[src], 0.0)
                out["a_var"][dst] = np.where(occ, tile.a_var[src], np.inf)
        return tuple(out[f] for f in fields)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for key in sorted(self.tiles):
            path = directory / f"tile_{key[0]}_{key[1]}.lmap"
            path.write_bytes(self.tiles[key].to_bytes())

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        tiles = {}
        config = None
        for path in sorted(directory.glob("tile_*.lmap")):
            tile = MapTile.from_bytes(path.read_bytes())
            tiles[tile.tile_index] = tile
            if config is None:
                config = GridConfig(resolution=tile.resolution,
                                    tile_dim=tile.dimension)
            elif (tile.resolution != config.resolution
                  or tile.dimension != config.tile_dim):
                raise MapError("tiles disagree on resolution or dimension")
        if not tiles:
            raise MapError(f"no tiles found in {directory}")
        return cls(config, tiles)


def finalize_map(accumulator):
    """Freeze an accumulator into a LidarMap, applying variance floors."""
    if accumulator.occupied_cell_count() == 0:
        raise MapError("no data: accumulator is empty")
    cfg = accumulator.config
    tiles = {}
    for key, acc in accumulator.tiles.items():
        occ = acc.n > 0
        if not occ.any():
            continue
        n = acc.n.astype(float)
        n_safe = np.where(occ, n, 1.0)
        i_var = np.where(occ, np.maximum(acc.i_m2 / n_safe, cfg.intensity_var_floor), 0.0)
        a_var = np.where(occ, np.maximum(acc.a_m2 / n_safe, cfg.altitude_var_floor), 0.0)
        tiles[key] = MapTile(
            key, cfg.resolution, cfg.tile_dim,
            np.minimum(acc.n, np.iinfo(np.uint32).max).astype(np.uint32),
            np.where(occ, acc.i_mean, 0.0).astype(np.float32),
            i_var.astype(np.float32),
            np.where(occ, acc.a_mean, 0.0).astype(np.float32),
            a_var.astype(np.float32),
        )
    return LidarMap(cfg, tiles)


@dataclass
class OnlineGrid:
    """Sparse grid of one scan rasterized at a candidate pose."""

    cells: np.ndarray    # (n, 2) world cell indices
    i_mean: np.ndarray
    i_var: np.ndarray    # floored, ready for variance weighting
    a_mean: np.ndarray
    counts: np.ndarray
    pose: Pose
    resolution: float

    @property
    def n_z(self):
        return int(self.cells.shape[0])


def rasterize_online(points, pose, config=None):
    """Bin a sensor-frame scan into the world lattice at the given pose."""
    config = config or GridConfig()
    if not pose.is_finite():
        raise MapError("pose contains non-finite values")
    points = np.asarray(points, dtype=float)
    world = points[:, 0:3] @ pose.rotation().T + pose.translation()
    intensity = points[:, 3]
    finite = np.isfinite(world).all(axis=1) & np.isfinite(intensity)
    lo, hi = config.ground_band
    band = (world[:, 2] >= pose.alt + lo) & (world[:, 2] <= pose.alt + hi)
    keep = finite & band
    if not np.any(keep):
        raise MapError("empty scan: no points survive the ground band")
    world = world[keep]
    intensity = intensity[keep]

    cells = np.floor(world[:, 0:2] / config.resolution).astype(np.int64)
    uniq, inv = np.unique(cells, axis=0, return_inverse=True)
    m = uniq.shape[0]
    nb, i_mean, i_m2 = _batch_stats(inv, intensity, m)
    _, a_mean, _ = _batch_stats(inv, world[:, 2], m)
    i_var = np.maximum(i_m2 / nb, config.intensity_var_floor)
    return OnlineGrid(uniq, i_mean, i_var, a_mean, nb.astype(np.int64),
                      pose, config.resolution)
