import numpy as np
import pytest

from navfuse.errors import LocalizationError
from navfuse.gridmap import Pose
from navfuse.lidarloc import (HeadingConfig, LidarLocConfig, estimate_heading,
                              lk_rotation)
from helpers import fourier_texture, map_from_fields, scan_from_map, smooth_texture


def rotated_pair(field, n, theta, center_px):
    """Map raster and an online raster rotated by theta about the center."""
    ii, jj = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float),
                         indexing="ij")
    map_img = field(ii, jj)
    c, s = np.cos(theta), np.sin(theta)
    di = ii - center_px[0]
    dj = jj - center_px[1]
    wi = c * di + s * dj + center_px[0]
    wj = -s * di + c * dj + center_px[1]
    online_img = field(wi, wj)
    occ = np.ones((n, n), dtype=bool)
    return online_img, occ, map_img, occ


class TestLkRotation:
    def test_identity_registration(self):
        rng = np.random.default_rng(60)
        field = fourier_texture(rng, scale=20.0)
        n = 96
        online, occ1, map_img, occ2 = rotated_pair(field, n, 0.0, (48.0, 48.0))
        res = lk_rotation(online, occ1, map_img, occ2, (48.0, 48.0))
        assert res.converged
        assert abs(res.rotation) < 1e-6

    def test_two_degree_rotation_recovered(self):
        rng = np.random.default_rng(61)
        field = fourier_texture(rng, scale=18.0)
        n = 96
        theta = np.deg2rad(2.0)
        online, occ1, map_img, occ2 = rotated_pair(field, n, theta, (48.0, 48.0))
        res = lk_rotation(online, occ1, map_img, occ2, (48.0, 48.0))
        assert res.converged
        assert res.rotation == pytest.approx(theta, abs=np.deg2rad(0.1))

    def test_sub_degree_accuracy_over_random_textures(self):
        rng = np.random.default_rng(62)
        errors = []
        for trial in range(25):
            field = fourier_texture(rng, scale=rng.uniform(12.0, 25.0))
            theta = rng.uniform(-np.deg2rad(5.0), np.deg2rad(5.0))
            online, occ1, map_img, occ2 = rotated_pair(field, 96, theta,
                                                       (48.0, 48.0))
            res = lk_rotation(online, occ1, map_img, occ2, (48.0, 48.0))
            errors.append(abs(res.rotation - theta))
        errors = np.array(errors)
        assert errors.max() < np.deg2rad(1.0)
        assert np.median(errors) < np.deg2rad(0.2)

    def test_insufficient_overlap_raises(self):
        rng = np.random.default_rng(63)
        field = fourier_texture(rng)
        n = 64
        online, occ1, map_img, occ2 = rotated_pair(field, n, 0.0, (32.0, 32.0))
        occ2 = np.zeros((n, n), dtype=bool)
        occ2[:10, :10] = True
        with pytest.raises(LocalizationError, match="insufficient overlap"):
            lk_rotation(online, occ1, map_img, occ2, (32.0, 32.0))

    def test_wild_rotation_flagged_not_returned(self):
        # an absurd recovered angle must be suppressed, not propagated
        rng = np.random.default_rng(64)
        n = 64
        online = rng.uniform(0, 255, (n, n))
        map_img = rng.uniform(0, 255, (n, n))
        occ = np.ones((n, n), dtype=bool)
        res = lk_rotation(online, occ, map_img, occ, (32.0, 32.0),
                          HeadingConfig(max_rotation=0.05))
        assert abs(res.rotation) <= 0.05


class TestEstimateHeading:
    def test_scan_heading_error_recovered(self):
        rng = np.random.default_rng(65)
        n = 280
        i_mean = smooth_texture((n, n), rng, corr_cells=12.0)
        lm = map_from_fields(i_mean, 4.0, np.zeros((n, n)), 0.0025)
        true_h = 0.6 + np.deg2rad(1.5)
        prior = Pose(140 * 0.125, 140 * 0.125, 0.0, 0.0, 0.0, 0.6)
        true_pose = Pose(prior.x, prior.y, 0.0, 0.0, 0.0, true_h)
        scan = scan_from_map(lm, true_pose, radius=14.0, rng=rng, sparsity=0.8)
        cfg = LidarLocConfig()
        h, ok = estimate_heading(scan, prior, lm, cfg)
        assert ok
        assert h == pytest.approx(true_h, abs=np.deg2rad(0.25))

    def test_off_map_scan_raises_insufficient_overlap(self):
        rng = np.random.default_rng(66)
        n = 64
        lm = map_from_fields(smooth_texture((n, n), rng), 4.0,
                             np.zeros((n, n)), 0.0025)
        prior = Pose(200.0, 200.0, 0.0, 0.0, 0.0, 0.3)   # far off the map
        scan = np.zeros((50, 4))
        scan[:, 0:2] = rng.uniform(-3, 3, (50, 2))
        scan[:, 3] = 100.0
        with pytest.raises(LocalizationError, match="insufficient overlap"):
            estimate_heading(scan, prior, lm, LidarLocConfig())
