"""Earth models, normal gravity, frame conversions and the map projection.

Positions are geodetic ``r = (lon, lat, alt)`` in radians/meters, matching
the navigation state layout.  A flat-earth model is provided for unit tests;
there ``r`` is simply ``(x_east, y_north, z_up)`` in meters.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_B = WGS84_A * (1.0 - WGS84_F)
EARTH_RATE = 7.292115e-5  # rad/s

# Somigliana normal gravity constants
_GAMMA_E = 9.7803253359
_SOMIG_K = 1.931852652458e-3
_GRAV_M = 3.449786506841e-3

STANDARD_GRAVITY = 9.80665


def radii_of_curvature(lat):
    """Transverse (prime vertical) and meridian radii at geodetic latitude."""
    s2 = np.sin(lat) ** 2
    den = 1.0 - WGS84_E2 * s2
    r_n = WGS84_A / np.sqrt(den)
    r_m = WGS84_A * (1.0 - WGS84_E2) / den ** 1.5
    return r_n, r_m


def normal_gravity(lat, alt=0.0):
    """Somigliana model with a second-order free-air height correction."""
    s2 = np.sin(lat) ** 2
    g0 = _GAMMA_E * (1.0 + _SOMIG_K * s2) / np.sqrt(1.0 - WGS84_E2 * s2)
    h_term = 1.0 - 2.0 / WGS84_A * (1.0 + WGS84_F + _GRAV_M - 2.0 * WGS84_F * s2) * alt \
        + 3.0 * alt * alt / (WGS84_A * WGS84_A)
    return g0 * h_term


@dataclass
class EarthParams:
    """Per-state earth quantities used by mechanization and error dynamics."""

    omega_ie_n: np.ndarray   # earth rate in ENU
    omega_en_n: np.ndarray   # transport rate in ENU
    g_n: np.ndarray          # gravity vector in ENU
    r_transverse: float
    r_meridian: float
    R_c: np.ndarray          # maps ENU velocity to d(lon, lat, alt)/dt


class Wgs84Model:
    """Full ellipsoidal earth; positions are (lon, lat, alt)."""

    name = "wgs84"
    is_flat = False

    def params(self, r, v):
        lon, lat, alt = r
        if abs(lat) >= np.deg2rad(89.9):
            raise GeometryError("polar singularity: latitude too close to a pole")
        r_n, r_m = radii_of_curvature(lat)
        cl, sl = np.cos(lat), np.sin(lat)
        omega_ie_n = EARTH_RATE * np.array([0.0, cl, sl])
        ve, vn = v[0], v[1]
        omega_en_n = np.array([
            -vn / (r_m + alt),
            ve / (r_n + alt),
            ve * np.tan(lat) / (r_n + alt),
        ])
        g_n = np.array([0.0, 0.0, -normal_gravity(lat, alt)])
        R_c = np.diag([1.0 / ((r_n + alt) * cl), 1.0 / (r_m + alt), 1.0])
        return EarthParams(omega_ie_n, omega_en_n, g_n, r_n, r_m, R_c)

    def meters_jacobian(self, r):
        """diag factors converting (dlon, dlat, dalt) to ENU meters."""
        lon, lat, alt = r
        r_n, r_m = radii_of_curvature(lat)
        return np.array([(r_n + alt) * np.cos(lat), r_m + alt, 1.0])


class FlatEarthModel:
    """Non-rotating flat earth for small-area unit tests; r is ENU meters."""

    name = "flat"
    is_flat = True

    def __init__(self, gravity=STANDARD_GRAVITY):
        self.gravity = gravity

    def params(self, r, v):
        zeros = np.zeros(3)
        return EarthParams(
            omega_ie_n=zeros.copy(),
            omega_en_n=zeros.copy(),
            g_n=np.array([0.0, 0.0, -self.gravity]),
            r_transverse=np.inf,
            r_meridian=np.inf,
            R_c=np.eye(3),
        )

    def meters_jacobian(self, r):
        return np.ones(3)


def geodetic_to_ecef(r):
    lon, lat, alt = r
    r_n, _ = radii_of_curvature(lat)
    cl, sl = np.cos(lat), np.sin(lat)
    clon, slon = np.cos(lon), np.sin(lon)
    x = (r_n + alt) * cl * clon
    y = (r_n + alt) * cl * slon
    z = (r_n * (1.0 - WGS84_E2) + alt) * sl
    return np.array([x, y, z])


def ecef_to_geodetic(p, iters=8):
    x, y, z = p
    lon = np.arctan2(y, x)
    rho = np.hypot(x, y)
    lat = np.arctan2(z, rho * (1.0 - WGS84_E2))
    for _ in range(iters):
        r_n, _ = radii_of_curvature(lat)
        lat = np.arctan2(z + WGS84_E2 * r_n * np.sin(lat), rho)
    r_n, _ = radii_of_curvature(lat)
    if abs(lat) < np.deg2rad(89.0):
        alt = rho / np.cos(lat) - r_n
    else:
        alt = z / np.sin(lat) - r_n * (1.0 - WGS84_E2)
    return np.array([lon, lat, alt])


def ecef_to_enu_matrix(lon, lat):
    """Rows are the ENU unit vectors expressed in ECEF."""
    cl, sl = np.cos(lat), np.sin(lat)
    clon, slon = np.cos(lon), np.sin(lon)
    return np.array([
        [-slon, clon, 0.0],
        [-sl * clon, -sl * slon, cl],
        [cl * clon, cl * slon, sl],
    ])


# ---------------------------------------------------------------------------
# Local transverse Mercator projection (conformal), anchored at a scenario
# origin so projected coordinates stay small.  Series coefficients to n^4.
# ---------------------------------------------------------------------------

_N3 = WGS84_F / (2.0 - WGS84_F)
_A_RECT = WGS84_A / (1.0 + _N3) * (1.0 + _N3 ** 2 / 4.0 + _N3 ** 4 / 64.0)
_ALPHA = np.array([
    _N3 / 2.0 - 2.0 * _N3 ** 2 / 3.0 + 5.0 * _N3 ** 3 / 16.0 + 41.0 * _N3 ** 4 / 180.0,
    13.0 * _N3 ** 2 / 48.0 - 3.0 * _N3 ** 3 / 5.0 + 557.0 * _N3 ** 4 / 1440.0,
    61.0 * _N3 ** 3 / 240.0 - 103.0 * _N3 ** 4 / 140.0,
    49561.0 * _N3 ** 4 / 161280.0,
])
_BETA = np.array([
    _N3 / 2.0 - 2.0 * _N3 ** 2 / 3.0 + 37.0 * _N3 ** 3 / 96.0 - _N3 ** 4 / 360.0,
    _N3 ** 2 / 48.0 + _N3 ** 3 / 15.0 - 437.0 * _N3 ** 4 / 1440.0,
    17.0 * _N3 ** 3 / 480.0 - 37.0 * _N3 ** 4 / 840.0,
    4397.0 * _N3 ** 4 / 161280.0,
])
_ECC = np.sqrt(WGS84_E2)


def _tau_prime(tau):
    sigma = np.sinh(_ECC * np.arctanh(_ECC * tau / np.sqrt(1.0 + tau * tau)))
    return tau * np.sqrt(1.0 + sigma * sigma) - sigma * np.sqrt(1.0 + tau * tau)


class LocalTmProjection:
    """Transverse Mercator with unit scale, centered on the scenario anchor."""

    def __init__(self, lon0, lat0):
        self.lon0 = float(lon0)
        self.lat0 = float(lat0)
        self._x0 = 0.0
        self._y0 = 0.0
        x0, y0 = self._forward_abs(lon0, lat0)
        self._x0, self._y0 = x0, y0

    def _forward_abs(self, lon, lat):
        tau_p = _tau_prime(np.tan(lat))
        dlon = lon - self.lon0
        xi_p = np.arctan2(tau_p, np.cos(dlon))
        eta_p = np.arcsinh(np.sin(dlon) / np.hypot(tau_p, np.cos(dlon)))
        xi = xi_p
        eta = eta_p
        for j in range(4):
            k = 2.0 * (j + 1)
            xi = xi + _ALPHA[j] * np.sin(k * xi_p) * np.cosh(k * eta_p)
            eta = eta + _ALPHA[j] * np.cos(k * xi_p) * np.sinh(k * eta_p)
        return _A_RECT * eta, _A_RECT * xi

    def forward(self, lon, lat):
        """Geodetic to local (x east-ish, y north-ish) meters."""
        x, y = self._forward_abs(lon, lat)
        return x - self._x0, y - self._y0

    def inverse(self, x, y):
        eta = (x + self._x0) / _A_RECT
        xi = (y + self._y0) / _A_RECT
        xi_p = xi
        eta_p = eta
        for j in range(4):
            k = 2.0 * (j + 1)
            xi_p = xi_p - _BETA[j] * np.sin(k * xi) * np.cosh(k * eta)
            eta_p = eta_p - _BETA[j] * np.cos(k * xi) * np.sinh(k * eta)
        tau_p = np.sin(xi_p) / np.hypot(np.sinh(eta_p), np.cos(xi_p))
        lon = self.lon0 + np.arctan2(np.sinh(eta_p), np.cos(xi_p))
        # Newton-invert the conformal latitude mapping
        tau = tau_p / (1.0 - WGS84_E2)
        for _ in range(10):
            f = _tau_prime(tau) - tau_p
            dtau = (1.0 - WGS84_E2) * np.sqrt((1.0 + _tau_prime(tau) ** 2)
                                              * (1.0 + tau * tau)) / (1.0 + tau * tau)
            step = f / dtau
            tau = tau - step
            if abs(step) < 1e-16 * max(1.0, abs(tau)):
                break
        lat = np.arctan(tau)
        return lon, lat


class FlatProjection:
    """Identity projection for the flat-earth model."""

    def forward(self, x, y):
        return float(x), float(y)

    def inverse(self, x, y):
        return float(x), float(y)


class GeoFrame:
    """Bundle of earth model plus map projection for one scenario."""

    def __init__(self, model, projection):
        self.model = model
        self.projection = projection

    @classmethod
    def wgs84(cls, lon0, lat0):
        return cls(Wgs84Model(), LocalTmProjection(lon0, lat0))

    @classmethod
    def flat(cls):
        return cls(FlatEarthModel(), FlatProjection())

    def to_xy(self, r):
        return self.projection.forward(r[0], r[1])

    def from_xy(self, x, y, alt=0.0):
        lon, lat = self.projection.inverse(x, y)
        return np.array([lon, lat, alt])
