import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from navfuse.errors import MapError
from navfuse.gridmap import (GridConfig, LidarMap, MapAccumulator, MapTile,
                             Pose, accumulate_scan, finalize_map,
                             rasterize_online)
from oracles import two_pass_stats

CFG = GridConfig(resolution=0.125, tile_dim=64)


def flat_pose(x=0.0, y=0.0, alt=0.0, heading=0.0):
    return Pose(x, y, alt, 0.0, 0.0, heading)


def make_points(xy, z, intensity):
    pts = np.zeros((len(xy), 4))
    pts[:, 0:2] = xy
    pts[:, 2] = z
    pts[:, 3] = intensity
    return pts


class TestAccumulate:
    def test_single_point_single_sample_stats(self):
        acc = MapAccumulator(CFG)
        accumulate_scan(acc, make_points([(1.0, 1.0)], [0.0], [100.0]),
                        flat_pose())
        m = finalize_map(acc)
        stats = m.query(1.0, 1.0)
        assert stats.sample_count == 1
        assert stats.intensity_mean == pytest.approx(100.0)
        # single-sample variance is zero, floored at finalize
        assert stats.intensity_var == pytest.approx(CFG.intensity_var_floor)

    def test_two_point_population_variance(self):
        acc = MapAccumulator(CFG)
        accumulate_scan(acc, make_points([(0.51, 0.52), (0.53, 0.51)],
                                         [0.0, 0.0], [90.0, 110.0]),
                        flat_pose())
        tile = acc.tiles[(0, 0)]
        ci, cj = 4, 4   # floor(0.5x / 0.125)
        assert tile.n[ci, cj] == 2
        assert tile.i_mean[ci, cj] == pytest.approx(100.0)
        assert tile.i_m2[ci, cj] / 2 == pytest.approx(100.0)   # population

    def test_running_stats_match_two_pass_oracle(self):
        rng = np.random.default_rng(21)
        acc = MapAccumulator(CFG)
        n = 10_000
        xy = rng.uniform(0.0, 4.0, (n, 2))
        z = rng.normal(0.0, 0.05, n)
        inten = rng.uniform(0.0, 255.0, n)
        # feed in several scans to exercise the batch merging
        for chunk in np.array_split(np.arange(n), 7):
            accumulate_scan(acc, make_points(xy[chunk], z[chunk], inten[chunk]),
                            flat_pose())
        cells = np.floor(xy / CFG.resolution).astype(int)
        tile = acc.tiles[(0, 0)]
        checked = 0
        for ci in range(0, 32, 3):
            for cj in range(0, 32, 3):
                sel = (cells[:, 0] == ci) & (cells[:, 1] == cj)
                if sel.sum() < 2:
                    continue
                mean, var = two_pass_stats(inten[sel])
                assert tile.i_mean[ci, cj] == pytest.approx(mean, rel=1e-9)
                assert tile.i_m2[ci, cj] / sel.sum() == pytest.approx(var, rel=1e-9)
                amean, avar = two_pass_stats(z[sel])
                assert tile.a_mean[ci, cj] == pytest.approx(amean, rel=1e-9, abs=1e-12)
                checked += 1
        assert checked > 20

    def test_order_invariance(self):
        rng = np.random.default_rng(22)
        n = 500
        xy = rng.uniform(0.0, 2.0, (n, 2))
        z = rng.normal(0.0, 0.02, n)
        inten = rng.uniform(10.0, 240.0, n)
        perm = rng.permutation(n)
        acc1 = MapAccumulator(CFG)
        acc2 = MapAccumulator(CFG)
        accumulate_scan(acc1, make_points(xy, z, inten), flat_pose())
        accumulate_scan(acc2, make_points(xy[perm], z[perm], inten[perm]),
                        flat_pose())
        t1, t2 = acc1.tiles[(0, 0)], acc2.tiles[(0, 0)]
        assert np.array_equal(t1.n, t2.n)
        assert_allclose(t1.i_mean, t2.i_mean, rtol=1e-9, atol=1e-12)
        assert_allclose(t1.i_m2, t2.i_m2, rtol=1e-9, atol=1e-9)

    def test_nonfinite_points_rejected_and_counted(self):
        acc = MapAccumulator(CFG)
        pts = make_points([(1.0, 1.0), (np.nan, 1.0)], [0.0, 0.0], [50.0, 60.0])
        accumulate_scan(acc, pts, flat_pose())
        assert acc.rejected_points == 1
        assert acc.occupied_cell_count() == 1

    def test_ground_band_filter(self):
        acc = MapAccumulator(CFG)
        pts = make_points([(1.0, 1.0), (1.2, 1.2), (1.4, 1.4)],
                          [0.0, 0.9, -2.5], [50.0, 60.0, 70.0])
        accumulate_scan(acc, pts, flat_pose(alt=0.0))
        assert acc.occupied_cell_count() == 1
        assert acc.rejected_points == 2

    def test_empty_accumulator_raises(self):
        with pytest.raises(MapError, match="no data"):
            finalize_map(MapAccumulator(CFG))

    def test_variance_floor_applied(self):
        acc = MapAccumulator(CFG)
        accumulate_scan(acc, make_points([(1.0, 1.0)] * 3, [0.0] * 3,
                                         [80.0] * 3), flat_pose())
        m = finalize_map(acc)
        stats = m.query(1.0, 1.0)
        assert stats.sample_count == 3
        assert stats.intensity_var == pytest.approx(CFG.intensity_var_floor)
        assert stats.altitude_var == pytest.approx(CFG.altitude_var_floor)


class TestTileIO:
    def _small_map(self, seed=30):
        rng = np.random.default_rng(seed)
        acc = MapAccumulator(CFG)
        n = 3000
        xy = rng.uniform(-4.0, 12.0, (n, 2))    # spans several tiles
        accumulate_scan(acc, make_points(xy, rng.normal(0, 0.03, n),
                                         rng.uniform(0, 255, n)), flat_pose())
        return finalize_map(acc)

    def test_save_load_roundtrip_bitwise(self, tmp_path):
        m = self._small_map()
        m.save(tmp_path / "map")
        m.save(tmp_path / "map2")
        for p1 in sorted((tmp_path / "map").glob("*.lmap")):
            p2 = tmp_path / "map2" / p1.name
            assert p1.read_bytes() == p2.read_bytes()
        m2 = LidarMap.load(tmp_path / "map")
        assert set(m2.tiles) == set(m.tiles)
        for key in m.tiles:
            a, b = m.tiles[key], m2.tiles[key]
            assert np.array_equal(a.count, b.count)
            assert np.array_equal(a.i_mean, b.i_mean)
            assert np.array_equal(a.a_var, b.a_var)

    def test_crc_detects_corruption(self, tmp_path):
        m = self._small_map()
        m.save(tmp_path)
        path = sorted(tmp_path.glob("*.lmap"))[0]
        blob = bytearray(path.read_bytes())
        blob[100] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(MapError, match="CRC"):
            LidarMap.load(tmp_path)

    def test_tile_header_fields(self):
        m = self._small_map()
        key = sorted(m.tiles)[0]
        blob = m.tiles[key].to_bytes()
        assert blob[0:4] == b"LMAP"
        tile = MapTile.from_bytes(blob)
        assert tile.tile_index == key
        assert tile.resolution == CFG.resolution
        assert tile.dimension == CFG.tile_dim


class TestQuery:
    def _map_with_cells(self, cells, alts=None):
        acc = MapAccumulator(CFG)
        xy = [( (c[0] + 0.5) * CFG.resolution, (c[1] + 0.5) * CFG.resolution)
              for c in cells]
        z = alts if alts is not None else [0.0] * len(cells)
        accumulate_scan(acc, make_points(xy, z, [100.0] * len(cells)),
                        flat_pose())
        return finalize_map(acc)

    def test_query_cell_center(self):
        m = self._map_with_cells([(10, 10)], [0.3])
        stats = m.query(10.5 * 0.125, 10.5 * 0.125)
        assert stats is not None
        assert stats.altitude_mean == pytest.approx(0.3, abs=1e-6)

    def test_query_empty_returns_none(self):
        m = self._map_with_cells([(10, 10)])
        assert m.query(100.0, 100.0) is None

    def test_altitude_fallback_neighbor(self):
        m = self._map_with_cells([(10, 10)], [0.25])
        alt = m.altitude_at(11.5 * 0.125, 10.5 * 0.125)   # adjacent empty cell
        assert alt == pytest.approx(0.25, abs=1e-6)

    def test_altitude_unavailable(self):
        m = self._map_with_cells([(10, 10)])
        with pytest.raises(MapError, match="altitude unavailable"):
            m.altitude_at(50.0, 50.0)

    def test_bulk_query_against_index_oracle(self):
        rng = np.random.default_rng(31)
        cells = [(int(i), int(j)) for i, j in rng.integers(0, 60, (200, 2))]
        m = self._map_with_cells(list(set(cells)))
        occupied = set(cells)
        pts = rng.uniform(0.0, 60 * 0.125, (100_000, 2))
        expect = np.array([
            (int(np.floor(p[0] / 0.125)), int(np.floor(p[1] / 0.125))) in occupied
            for p in pts[:2000]])
        got = np.array([m.query(p[0], p[1]) is not None for p in pts[:2000]])
        assert np.array_equal(expect, got)


class TestRasterize:
    def test_identity_pose_center_point(self):
        grid = rasterize_online(make_points([(1.3125, 2.0625)], [0.0], [42.0]),
                                flat_pose(), CFG)
        assert grid.n_z == 1
        assert tuple(grid.cells[0]) == (10, 16)
        assert grid.i_mean[0] == pytest.approx(42.0)

    def test_translation_by_whole_cells_shifts_indices(self):
        rng = np.random.default_rng(32)
        pts = make_points(rng.uniform(0, 3, (200, 2)), np.zeros(200),
                          rng.uniform(0, 255, 200))
        g0 = rasterize_online(pts, flat_pose(), CFG)
        k = 7
        g1 = rasterize_online(pts, flat_pose(x=k * CFG.resolution), CFG)
        order0 = np.lexsort((g0.cells[:, 1], g0.cells[:, 0]))
        order1 = np.lexsort((g1.cells[:, 1], g1.cells[:, 0]))
        assert np.array_equal(g0.cells[order0] + np.array([k, 0]),
                              g1.cells[order1])

    def test_n_z_matches_set_oracle(self):
        rng = np.random.default_rng(33)
        n = 5000
        xy = rng.uniform(-10, 10, (n, 2))
        pts = make_points(xy, rng.normal(0, 0.05, n), rng.uniform(0, 255, n))
        heading = 0.7
        pose = flat_pose(3.0, -2.0, 0.0, heading)
        grid = rasterize_online(pts, pose, CFG)
        R = pose.rotation()
        world = pts[:, 0:3] @ R.T + pose.translation()
        keep = (world[:, 2] >= -2.0) & (world[:, 2] <= 0.5)
        cells = {(int(np.floor(x / 0.125)), int(np.floor(y / 0.125)))
                 for x, y in world[keep][:, 0:2]}
        assert grid.n_z == len(cells)

    def test_empty_scan_raises(self):
        pts = make_points([(0.0, 0.0)], [5.0], [10.0])   # above the band
        with pytest.raises(MapError, match="empty scan"):
            rasterize_online(pts, flat_pose(), CFG)

    def test_online_variance_floored(self):
        grid = rasterize_online(make_points([(1.0, 1.0)], [0.0], [42.0]),
                                flat_pose(), CFG)
        assert grid.i_var[0] >= CFG.intensity_var_floor


@settings(max_examples=50, deadline=None)
@given(ci=st.integers(-10_000, 10_000), cj=st.integers(-10_000, 10_000))
def test_cell_center_roundtrip_exact(ci, cj):
    res = CFG.resolution
    x = (ci + 0.5) * res
    y = (cj + 0.5) * res
    assert int(np.floor(x / res)) == ci
    assert int(np.floor(y / res)) == cj
    assert abs(((ci + 0.5) * res) - x) < 1e-9
