import numpy as np
import pytest
from numpy.testing import assert_allclose

from navfuse.quat import (att_to_quat, dcm_to_quat, heading_of, quat_conj,
                          quat_from_rotvec, quat_mul, quat_normalize,
                          quat_to_att, quat_to_dcm, quat_to_rotvec, skew,
                          wrap_angle)


def random_quat(rng):
    q = rng.standard_normal(4)
    return quat_normalize(q)


def test_skew_matches_cross():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-15)


def test_quat_mul_matches_dcm_product():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p, q = random_quat(rng), random_quat(rng)
        assert_allclose(quat_to_dcm(quat_mul(p, q)),
                        quat_to_dcm(p) @ quat_to_dcm(q), atol=1e-12)


def test_rotvec_roundtrip():
    # log map returns the shortest rotation, so keep angles below pi
    rng = np.random.default_rng(2)
    for _ in range(50):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        rho = direction * rng.uniform(1e-12, np.pi - 1e-6)
        back = quat_to_rotvec(quat_from_rotvec(rho))
        assert_allclose(back, rho, atol=1e-12)


def test_dcm_quat_roundtrip_all_quadrants():
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = random_quat(rng)
        if q[0] < 0:
            q = -q
        assert_allclose(dcm_to_quat(quat_to_dcm(q)), q, atol=1e-12)


def test_att_matrix_convention():
    # C = Rz(-h) Rx(pitch) Ry(roll) acting body->nav with x=E, y=N, z=U
    h, pitch, roll = 0.4, -0.1, 0.25
    ch, sh = np.cos(h), np.sin(h)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Rz = np.array([[ch, sh, 0.0], [-sh, ch, 0.0], [0.0, 0.0, 1.0]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    Ry = np.array([[cr, 0.0, sr], [0.0, 1.0, 0.0], [-sr, 0.0, cr]])
    assert_allclose(quat_to_dcm(att_to_quat(h, pitch, roll)), Rz @ Rx @ Ry,
                    atol=1e-12)


def test_att_roundtrip_and_heading():
    rng = np.random.default_rng(4)
    for _ in range(50):
        h = rng.uniform(-np.pi, np.pi)
        pitch = rng.uniform(-1.2, 1.2)
        roll = rng.uniform(-np.pi + 0.1, np.pi - 0.1)
        q = att_to_quat(h, pitch, roll)
        h2, p2, r2 = quat_to_att(q)
        assert_allclose([h2, p2, r2], [h, pitch, roll], atol=1e-12)
        assert_allclose(heading_of(q), h, atol=1e-12)


def test_heading_forward_axis():
    # heading 0 points the forward (body y) axis north, pi/2 points it east
    C0 = quat_to_dcm(att_to_quat(0.0))
    assert_allclose(C0 @ np.array([0.0, 1.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)
    C90 = quat_to_dcm(att_to_quat(np.pi / 2.0))
    assert_allclose(C90 @ np.array([0.0, 1.0, 0.0]), [1.0, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("angle,expected", [
    (0.0, 0.0), (np.pi, np.pi), (-np.pi, np.pi),
    (3.5 * np.pi, -0.5 * np.pi), (-0.25, -0.25),
])
def test_wrap_angle(angle, expected):
    assert_allclose(wrap_angle(angle), expected, atol=1e-12)


def test_conjugate_inverts():
    rng = np.random.default_rng(5)
    q = random_quat(rng)
    ident = quat_mul(q, quat_conj(q))
    assert_allclose(ident, [1.0, 0.0, 0.0, 0.0], atol=1e-12)
