import numpy as np
import pytest

from avatarforge import rotations as rot
from avatarforge.errors import DegeneracyError


def test_zero_axis_angle_is_identity():
    np.testing.assert_array_equal(
        rot.axis_angle_to_matrix(np.zeros(3)), np.eye(3))


def test_quarter_turn_about_z():
    got = rot.axis_angle_to_matrix(np.array([0.0, 0.0, np.pi / 2]))
    want = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_axis_angle_matrices_are_proper_rotations():
    rng = np.random.default_rng(0)
    aa = rng.normal(size=(200, 3)) * 2.0
    mats = rot.axis_angle_to_matrix(aa)
    eye = np.einsum("nij,nkj->nik", mats, mats)
    assert np.max(np.abs(eye - np.eye(3))) < 1e-12
    assert np.max(np.abs(np.linalg.det(mats) - 1.0)) < 1e-12


def test_axis_angle_round_trip():
    rng = np.random.default_rng(1)
    direction = rng.normal(size=(500, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    angles = rng.uniform(1e-4, np.pi - 1e-4, size=(500, 1))
    aa = direction * angles
    back = rot.matrix_to_axis_angle(rot.axis_angle_to_matrix(aa))
    assert np.max(np.abs(back - aa)) < 1e-9


def test_axis_angle_round_trip_near_pi():
    rng = np.random.default_rng(2)
    direction = rng.normal(size=(100, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    aa = direction * (np.pi - 1e-9)
    mats = rot.axis_angle_to_matrix(aa)
    back = rot.matrix_to_axis_angle(mats)
    again = rot.axis_angle_to_matrix(back)
    # Axis sign may flip at pi; the rotation itself must round trip.
    assert np.max(np.abs(again - mats)) < 1e-6


def test_negated_axis_angle_is_transpose():
    rng = np.random.default_rng(3)
    aa = rng.normal(size=(50, 3))
    a = rot.axis_angle_to_matrix(aa)
    b = rot.axis_angle_to_matrix(-aa)
    assert np.max(np.abs(b - np.transpose(a, (0, 2, 1)))) < 1e-12


def test_pi_axis_sign_is_canonical():
    mats = rot.axis_angle_to_matrix(np.array([
        [np.pi, 0.0, 0.0],
        [0.0, np.pi, 0.0],
        [0.0, 0.0, np.pi],
    ]))
    back = rot.matrix_to_axis_angle(mats)
    for v in back:
        nz = np.nonzero(np.abs(v) > 1e-9)[0]
        assert v[nz[0]] > 0


def test_sixd_identity_round_trip():
    enc = rot.matrix_to_sixd(np.eye(3))
    np.testing.assert_array_equal(enc, [1, 0, 0, 0, 1, 0])
    np.testing.assert_allclose(rot.sixd_to_matrix(enc), np.eye(3), atol=1e-15)


def test_sixd_decode_removes_scale():
    got = rot.sixd_to_matrix(np.array([2.0, 0, 0, 0, 3.0, 0]))
    np.testing.assert_allclose(got, np.eye(3), atol=1e-15)


def test_sixd_round_trip_random():
    rng = np.random.default_rng(4)
    mats = rot.random_rotations(1000, rng)
    back = rot.sixd_to_matrix(rot.matrix_to_sixd(mats))
    assert np.max(np.abs(back - mats)) < 1e-12


def test_sixd_encode_decode_idempotent():
    rng = np.random.default_rng(5)
    mats = rot.random_rotations(100, rng)
    six = rot.matrix_to_sixd(mats)
    once = rot.matrix_to_sixd(rot.sixd_to_matrix(six))
    twice = rot.matrix_to_sixd(rot.sixd_to_matrix(once))
    assert np.max(np.abs(once - twice)) < 1e-12


def test_sixd_degenerate_raises():
    with pytest.raises(DegeneracyError):
        rot.sixd_to_matrix(np.array([1.0, 0, 0, 2.0, 0, 0]))
    with pytest.raises(DegeneracyError):
        rot.sixd_to_matrix(np.zeros(6))


def test_sixd_identity_helper():
    out = rot.sixd_identity((4, 24))
    assert out.shape == (4, 24, 6)
    np.testing.assert_allclose(
        rot.sixd_to_matrix(out[0, 0]), np.eye(3), atol=1e-15)
