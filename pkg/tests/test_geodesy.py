import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from navfuse.errors import GeometryError
from navfuse.geodesy import (EARTH_RATE, LocalTmProjection, Wgs84Model,
                             ecef_to_enu_matrix, ecef_to_geodetic,
                             geodetic_to_ecef, normal_gravity,
                             radii_of_curvature)
from oracles import somigliana_gravity


def test_transverse_radius_at_equator():
    model = Wgs84Model()
    ep = model.params(np.array([0.1, 0.0, 0.0]), np.zeros(3))
    assert ep.r_transverse == pytest.approx(6378137.0, abs=1e-6)


def test_earth_rate_components():
    model = Wgs84Model()
    lat = np.deg2rad(37.0)
    ep = model.params(np.array([0.0, lat, 0.0]), np.zeros(3))
    expected = EARTH_RATE * np.array([0.0, np.cos(lat), np.sin(lat)])
    assert_allclose(ep.omega_ie_n, expected, rtol=1e-15)


def test_gravity_against_independent_formula():
    g = normal_gravity(np.deg2rad(45.0), 0.0)
    assert g == pytest.approx(somigliana_gravity(np.deg2rad(45.0)), abs=1e-6)


def test_polar_singularity_raises():
    model = Wgs84Model()
    with pytest.raises(GeometryError):
        model.params(np.array([0.0, np.deg2rad(89.95), 0.0]), np.zeros(3))


def test_transport_rate_textbook_form():
    model = Wgs84Model()
    lat = np.deg2rad(-22.0)
    v = np.array([13.0, -4.0, 0.7])
    ep = model.params(np.array([0.4, lat, 120.0]), v)
    r_n, r_m = radii_of_curvature(lat)
    assert_allclose(ep.omega_en_n,
                    [-v[1] / (r_m + 120.0), v[0] / (r_n + 120.0),
                     v[0] * np.tan(lat) / (r_n + 120.0)], rtol=1e-14)


def test_ecef_roundtrip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        r = np.array([rng.uniform(-np.pi, np.pi),
                      rng.uniform(-1.4, 1.4),
                      rng.uniform(-100.0, 4000.0)])
        back = ecef_to_geodetic(geodetic_to_ecef(r))
        assert_allclose(back[0], r[0], atol=1e-12)
        assert_allclose(back[1], r[1], atol=1e-12)
        assert_allclose(back[2], r[2], atol=1e-6)


def test_enu_matrix_orthonormal():
    rot = ecef_to_enu_matrix(0.3, 0.8)
    assert_allclose(rot @ rot.T, np.eye(3), atol=1e-14)
    # up axis equals the ellipsoid normal direction
    up = rot[2]
    n = geodetic_to_ecef(np.array([0.3, 0.8, 1.0])) \
        - geodetic_to_ecef(np.array([0.3, 0.8, 0.0]))
    assert_allclose(up, n / np.linalg.norm(n), atol=1e-9)


class TestProjection:
    lon0, lat0 = np.deg2rad(116.35), np.deg2rad(31.8)

    def setup_method(self):
        self.proj = LocalTmProjection(self.lon0, self.lat0)

    def test_anchor_is_origin(self):
        x, y = self.proj.forward(self.lon0, self.lat0)
        assert abs(x) < 1e-9 and abs(y) < 1e-9

    def test_roundtrip_submillimeter(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            lon = self.lon0 + rng.uniform(-0.05, 0.05)
            lat = self.lat0 + rng.uniform(-0.05, 0.05)
            x, y = self.proj.forward(lon, lat)
            lon2, lat2 = self.proj.inverse(x, y)
            assert_allclose([lon2, lat2], [lon, lat], atol=1e-12)

    def test_meridian_arc_against_quadrature(self):
        # northing along the central meridian equals the meridian arc length
        dlat = 0.01
        _, y = self.proj.forward(self.lon0, self.lat0 + dlat)
        arc, _ = quad(lambda L: radii_of_curvature(L)[1],
                      self.lat0, self.lat0 + dlat, epsabs=1e-10)
        assert y == pytest.approx(arc, abs=1e-4)

    def test_conformal_scale_isotropic(self):
        # finite-difference jacobian must be a rotation times a scalar
        lon = self.lon0 + 0.01
        lat = self.lat0 + 0.006
        d = 1e-7
        x0, y0 = self.proj.forward(lon, lat)
        xl, yl = self.proj.forward(lon + d, lat)
        xp, yp = self.proj.forward(lon, lat + d)
        J = np.array([[(xl - x0) / d, (xp - x0) / d],
                      [(yl - y0) / d, (yp - y0) / d]])
        # conformality: columns orthogonal after metric normalization
        r_n, r_m = radii_of_curvature(lat)
        m = np.diag([1.0 / ((r_n) * np.cos(lat)), 1.0 / r_m])
        A = J @ m
        assert_allclose(A[:, 0] @ A[:, 1], 0.0, atol=1e-4)
        assert np.linalg.norm(A[:, 0]) == pytest.approx(np.linalg.norm(A[:, 1]),
                                                        rel=1e-6)

    def test_scale_near_unity_at_anchor(self):
        x, y = self.proj.forward(self.lon0, self.lat0 + 1e-5)
        r_n, r_m = radii_of_curvature(self.lat0)
        assert y == pytest.approx(r_m * 1e-5, rel=1e-7)
