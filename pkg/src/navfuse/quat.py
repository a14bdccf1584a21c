"""Quaternion and small rotation helpers.

Conventions used throughout the package:

* quaternions are Hamilton, scalar first: ``q = [w, x, y, z]``
* ``q_b_n`` rotates body-frame vectors into the navigation frame,
  ``v_n = dcm(q_b_n) @ v_b``
* navigation frame is ENU (x east, y north, z up), body frame is RFU
  (x right, y forward, z up)
* attitude angles are (heading, pitch, roll): heading is measured from
  north, positive toward east (clockwise seen from above); pitch raises
  the forward axis; roll is about the forward axis.
"""

import numpy as np

_SMALL_ANGLE = 1e-10


def skew(v):
    """Skew-symmetric matrix such that skew(a) @ b == cross(a, b)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def quat_mul(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    return q / np.linalg.norm(q)


def quat_from_rotvec(rho):
    """Exact exponential map of a rotation vector."""
    rho = np.asarray(rho, dtype=float)
    angle = np.linalg.norm(rho)
    if angle < _SMALL_ANGLE:
        # series for sin(a/2)/a, accurate to O(a^4)
        half = 0.5 - angle * angle / 48.0
        return quat_normalize(np.array([1.0 - angle * angle / 8.0,
                                        half * rho[0], half * rho[1], half * rho[2]]))
    axis = rho / angle
    s = np.sin(0.5 * angle)
    return np.array([np.cos(0.5 * angle), s * axis[0], s * axis[1], s * axis[2]])


def quat_to_rotvec(q):
    """Logarithm map, shortest rotation."""
    q = quat_normalize(np.asarray(q, dtype=float))
    if q[0] < 0.0:
        q = -q
    vec = q[1:4]
    norm_vec = np.linalg.norm(vec)
    if norm_vec < _SMALL_ANGLE:
        return 2.0 * vec
    angle = 2.0 * np.arctan2(norm_vec, q[0])
    return vec * (angle / norm_vec)


def quat_to_dcm(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])


def dcm_to_quat(C):
    """Shepperd's method, numerically safe for all quadrants."""
    tr = np.trace(C)
    cand = np.array([tr, C[0, 0], C[1, 1], C[2, 2]])
    i = int(np.argmax(cand))
    if i == 0:
        w = 0.5 * np.sqrt(1.0 + tr)
        q = np.array([w,
                      (C[2, 1] - C[1, 2]) / (4.0 * w),
                      (C[0, 2] - C[2, 0]) / (4.0 * w),
                      (C[1, 0] - C[0, 1]) / (4.0 * w)])
    else:
        a = i - 1
        b = (a + 1) % 3
        c = (a + 2) % 3
        s = np.sqrt(1.0 + C[a, a] - C[b, b] - C[c, c])
        q = np.empty(4)
        q[0] = (C[c, b] - C[b, c]) / (2.0 * s)
        q[1 + a] = 0.5 * s
        q[1 + b] = (C[b, a] + C[a, b]) / (2.0 * s)
        q[1 + c] = (C[c, a] + C[a, c]) / (2.0 * s)
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def _axis_quat(axis, angle):
    q = np.zeros(4)
    q[0] = np.cos(0.5 * angle)
    q[1 + axis] = np.sin(0.5 * angle)
    return q


def att_to_quat(heading, pitch=0.0, roll=0.0):
    """Quaternion body->nav from (heading, pitch, roll).

    Composition is intrinsic Z-X-Y: rotate about up by -heading, then
    about the new right axis by pitch, then about the forward axis by roll.
    """
    qz = _axis_quat(2, -heading)
    qx = _axis_quat(0, pitch)
    qy = _axis_quat(1, roll)
    return quat_normalize(quat_mul(quat_mul(qz, qx), qy))


def quat_to_att(q):
    """Inverse of att_to_quat; valid for |pitch| < 90 deg."""
    C = quat_to_dcm(q)
    heading = np.arctan2(C[0, 1], C[1, 1])
    pitch = np.arcsin(np.clip(C[2, 1], -1.0, 1.0))
    roll = np.arctan2(-C[2, 0], C[2, 2])
    return heading, pitch, roll


def heading_of(q):
    """Heading angle of the body forward axis, from north toward east."""
    C = quat_to_dcm(q)
    return np.arctan2(C[0, 1], C[1, 1])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w) if np.ndim(a) else (np.pi if w == -np.pi else float(w))
