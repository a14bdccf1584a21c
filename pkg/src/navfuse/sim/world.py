"""Synthetic world: band-limited intensity texture plus altitude features.

The world is defined on the same cell lattice as the map.  Intensity is a
smoothed white-noise field; altitude is built from analytic road furniture
(curbs and walls with gaps, both functions of the signed distance to the
trajectory centerline and the along-track coordinate) plus low-amplitude
roughness.  A change-set describes a post-change world: intensity redrawn
in a random subset of cells inside the change interval and optionally a
newly built wall.
"""

from collections import OrderedDict

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .rng import stream_rng

_HALO_SIGMAS = 4.0


def _smoothed_noise(seed, stream, tile, dim, sigma_cells):
    """Unit-variance smooth field for one tile, seamless across tiles.

    White noise is generated per tile from its own keyed stream; the halo
    needed by the smoothing kernel is assembled from the neighbors' noise so
    adjoining tiles agree bitwise on their shared border region.
    """
    halo = int(np.ceil(_HALO_SIGMAS * sigma_cells)) + 1
    ti, tj = tile
    big = np.empty((dim + 2 * halo, dim + 2 * halo))
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            rng = stream_rng(seed, stream, ti + di, tj + dj)
            block = rng.standard_normal((dim, dim))
            i0 = halo + di * dim
            j0 = halo + dj * dim
            si = slice(max(i0, 0), min(i0 + dim, dim + 2 * halo))
            sj = slice(max(j0, 0), min(j0 + dim, dim + 2 * halo))
            bi = slice(si.start - i0, si.stop - i0)
            bj = slice(sj.start - j0, sj.stop - j0)
            big[si, sj] = block[bi, bj]
    sm = ndimage.gaussian_filter(big, sigma_cells, mode="constant",
                                 truncate=_HALO_SIGMAS)
    field = sm[halo:halo + dim, halo:halo + dim]
    # white noise smoothed by a gaussian kernel has std ~ 1/(2 sqrt(pi) sigma)
    return field * (2.0 * np.sqrt(np.pi) * sigma_cells)


class World:
    """Cell-wise intensity/altitude ground truth with optional change-set."""

    def __init__(self, scenario, centerline_xy, cache_tiles=16):
        self.scenario = scenario
        self.spec = scenario.world
        self.res = scenario.resolution
        self.dim = scenario.tile_dim
        # texture correlation length is the 1/e distance of the smoothed
        # field's autocorrelation, which is sqrt(2) * kernel sigma * 2 / ...
        self.sigma_cells = max(self.spec.texture_corr_length / (2.0 * self.res), 1.0)
        line = np.asarray(centerline_xy, dtype=float)
        if line.shape[0] < 2:
            line = np.vstack([line, line + np.array([0.0, 1e-3])])
        self._line = line
        seg = np.diff(line, axis=0)
        self._arclen = np.concatenate([[0.0], np.cumsum(np.linalg.norm(seg, axis=1))])
        self._tree = cKDTree(line)
        tangents = np.vstack([seg, seg[-1]])
        self._tangents = tangents / np.maximum(
            np.linalg.norm(tangents, axis=1, keepdims=True), 1e-12)
        self._cache = OrderedDict()
        self._cache_tiles = cache_tiles

    # -- geometry -----------------------------------------------------------

    def _centerline_frame(self, xy):
        """Signed lateral distance and along-track coordinate per point."""
        dist, idx = self._tree.query(xy)
        delta = xy - self._line[idx]
        tang = self._tangents[idx]
        side = np.sign(tang[:, 0] * delta[:, 1] - tang[:, 1] * delta[:, 0])
        side = np.where(side == 0.0, 1.0, side)
        return dist * side, self._arclen[idx]

    def _feature_altitude(self, d, s, changed):
        spec = self.spec
        alt = np.zeros_like(d)
        ad = np.abs(d)
        if spec.curb_offset > 0.0:
            curb = (ad >= spec.curb_offset) & (ad <= spec.curb_offset + spec.curb_width)
            gap = (s % spec.crossing_period) < spec.crossing_length
            alt = np.where(curb & ~gap, spec.curb_height, alt)
        if spec.wall_offset > 0.0:
            wall = (ad >= spec.wall_offset) & (ad <= spec.wall_offset + spec.wall_width)
            gap = (s % spec.wall_gap_period) < spec.wall_gap_length
            alt = np.where(wall & ~gap, spec.wall_height, alt)
        if changed and spec.change_new_wall and len(spec.change_interval) == 2:
            s0, s1 = spec.change_interval
            new_wall = ((d >= spec.change_wall_offset)
                        & (d <= spec.change_wall_offset + spec.wall_width)
                        & (s >= s0) & (s <= s1))
            gap = ((s + 0.5 * spec.wall_gap_period) % spec.wall_gap_period) \
                < spec.wall_gap_length
            alt = np.where(new_wall & ~gap, spec.change_wall_height, alt)
        return alt

    # -- per-tile fields ----------------------------------------------------

    def _tile_fields(self, tile):
        cached = self._cache.get(tile)
        if cached is not None:
            self._cache.move_to_end(tile)
            return cached
        dim = self.dim
        spec = self.spec
        seed = self.scenario.seed
        ti, tj = tile
        ci = ti * dim + np.arange(dim)
        cj = tj * dim + np.arange(dim)
        xs = (ci + 0.5) * self.res
        ys = (cj + 0.5) * self.res
        xy = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        d, s = self._centerline_frame(xy)
        d = d.reshape(dim, dim)
        s = s.reshape(dim, dim)
        valid = np.abs(d) <= spec.corridor_half_width

        tex = _smoothed_noise(seed, "world_texture", tile, dim, self.sigma_cells)
        intensity = np.clip(spec.texture_mean + spec.texture_sd * tex, 3.0, 252.0)
        rough = _smoothed_noise(seed, "world_roughness", tile, dim, 4.0) \
            * spec.altitude_roughness
        alt_pre = self._feature_altitude(d, s, changed=False) + rough
        alt_post = self._feature_altitude(d, s, changed=True) + rough

        int_post = intensity
        if spec.change_fraction > 0.0 and len(spec.change_interval) == 2:
            s0, s1 = spec.change_interval
            in_region = (s >= s0) & (s <= s1)
            mask_rng = stream_rng(seed, "world_change_mask", ti, tj)
            redraw = mask_rng.random((dim, dim)) < spec.change_fraction
            tex2 = _smoothed_noise(seed, "world_texture_change", tile, dim,
                                   self.sigma_cells)
            int2 = np.clip(spec.texture_mean + spec.texture_sd * tex2, 3.0, 252.0)
            int_post = np.where(in_region & redraw, int2, intensity)

        fields = {
            "valid": valid,
            "int_pre": intensity.astype(np.float32),
            "int_post": int_post.astype(np.float32),
            "alt_pre": alt_pre.astype(np.float32),
            "alt_post": alt_post.astype(np.float32),
        }
        self._cache[tile] = fields
        if len(self._cache) > self._cache_tiles:
            self._cache.popitem(last=False)
        return fields

    # -- public sampling ----------------------------------------------------

    def sample_cells(self, cells, changed=False):
        """(intensity, altitude, valid) for an array of world cell indices."""
        cells = np.asarray(cells, dtype=np.int64)
        n = cells.shape[0]
        intensity = np.zeros(n)
        altitude = np.zeros(n)
        valid = np.zeros(n, dtype=bool)
        tiles = np.floor_divide(cells, self.dim)
        ikey = "int_post" if changed else "int_pre"
        akey = "alt_post" if changed else "alt_pre"
        for tile in {(int(a), int(b)) for a, b in np.unique(tiles, axis=0)}:
            mask = (tiles[:, 0] == tile[0]) & (tiles[:, 1] == tile[1])
            local = cells[mask] - np.array(tile) * self.dim
            fields = self._tile_fields(tile)
            li, lj = local[:, 0], local[:, 1]
            intensity[mask] = fields[ikey][li, lj]
            altitude[mask] = fields[akey][li, lj]
            valid[mask] = fields["valid"][li, lj]
        return intensity, altitude, valid

    def corridor_tiles(self, margin=None):
        """Tile keys whose bounding box intersects the mapped corridor."""
        margin = margin if margin is not None else self.spec.corridor_half_width
        tile_m = self.dim * self.res
        keys = set()
        for p in self._line:
            t0 = np.floor((p - margin) / tile_m).astype(int)
            t1 = np.floor((p + margin) / tile_m).astype(int)
            for ti in range(t0[0], t1[0] + 1):
                for tj in range(t0[1], t1[1] + 1):
                    keys.add((ti, tj))
        return sorted(keys)

    def corridor_cells(self, tile):
        """Local (i, j) indices of corridor cells within one tile."""
        fields = self._tile_fields(tile)
        return np.nonzero(fields["valid"])
