"""Conversions among axis-angle, rotation matrices, and 6-D rotations.

All functions are pure, accept a trailing batch of rotations, and work in
float64.  The 6-D representation stores the first two columns of a
rotation matrix, column-major: ``(r00, r10, r20, r01, r11, r21)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DegeneracyError

_EPS_ANGLE = 1e-12
_CROSS_EPS = 1e-9


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for axis-angle vectors of shape (..., 3)."""
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1)
    safe = np.where(angle > _EPS_ANGLE, angle, 1.0)
    axis = aa / safe[..., None]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zeros = np.zeros_like(x)
    k = np.stack([
        np.stack([zeros, -z, y], axis=-1),
        np.stack([z, zeros, -x], axis=-1),
        np.stack([-y, x, zeros], axis=-1),
    ], axis=-2)
    eye = np.broadcast_to(np.eye(3), k.shape).copy()
    s = np.sin(angle)[..., None, None]
    c = (1.0 - np.cos(angle))[..., None, None]
    rot = eye + s * k + c * (k @ k)
    tiny = angle <= _EPS_ANGLE
    if np.any(tiny):
        rot[tiny] = np.eye(3)
    return rot


def matrix_to_axis_angle(rot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix`; angle lands in [0, pi].

    At angle pi the axis sign is ambiguous; the axis whose first nonzero
    component is positive is returned, so repeated calls are identical.
    """
    rot = np.asarray(rot, dtype=np.float64)
    batch = rot.shape[:-2]
    flat = rot.reshape((-1, 3, 3))
    out = np.zeros((flat.shape[0], 3))
    tr = np.clip((flat[:, 0, 0] + flat[:, 1, 1] + flat[:, 2, 2] - 1.0) / 2.0,
                 -1.0, 1.0)
    angle = np.arccos(tr)
    skew = np.stack([
        flat[:, 2, 1] - flat[:, 1, 2],
        flat[:, 0, 2] - flat[:, 2, 0],
        flat[:, 1, 0] - flat[:, 0, 1],
    ], axis=-1)
    sin_a = np.sin(angle)

    generic = sin_a > 1e-6
    out[generic] = skew[generic] * (angle[generic] / (2.0 * sin_a[generic]))[:, None]

    near_pi = (~generic) & (angle > np.pi / 2)
    for i in np.nonzero(near_pi)[0]:
        r = flat[i]
        d = np.clip(np.diag(r), -1.0, None)
        axis = np.sqrt(np.maximum((d + 1.0) / 2.0, 0.0))
        # Off-diagonal sums fix relative signs: R+I = 2 axis axis^T at pi.
        j = int(np.argmax(axis))
        for k in range(3):
            if k != j and axis[k] > 0:
                if r[j, k] + r[k, j] < 0:
                    axis[k] = -axis[k]
        if axis[j] == 0:
            axis = np.zeros(3)
            axis[j] = 1.0
        nz = np.nonzero(np.abs(axis) > 1e-12)[0]
        if nz.size and axis[nz[0]] < 0:
            axis = -axis
        out[i] = axis / np.linalg.norm(axis) * angle[i]

    tiny = (~generic) & (angle <= np.pi / 2)
    out[tiny] = skew[tiny] * 0.5
    return out.reshape(batch + (3,))


def matrix_to_sixd(rot: np.ndarray) -> np.ndarray:
    """First two columns of the rotation, column-major, shape (..., 6)."""
    rot = np.asarray(rot, dtype=np.float64)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def sixd_to_matrix(sixd: np.ndarray) -> np.ndarray:
    """Gram-Schmidt decode of a 6-D rotation, shape (..., 6) -> (..., 3, 3)."""
    sixd = np.asarray(sixd, dtype=np.float64)
    a1 = sixd[..., 0:3]
    a2 = sixd[..., 3:6]
    cross = np.cross(a1, a2)
    bad = np.linalg.norm(cross, axis=-1) < _CROSS_EPS
    if np.any(bad):
        idx = np.argwhere(bad)
        raise DegeneracyError(
            f"6-D rotation has (near-)parallel or zero columns at index "
            f"{tuple(idx[0])}")
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = a2p / np.linalg.norm(a2p, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def axis_angle_to_sixd(aa: np.ndarray) -> np.ndarray:
    return matrix_to_sixd(axis_angle_to_matrix(aa))


def sixd_to_axis_angle(sixd: np.ndarray) -> np.ndarray:
    return matrix_to_axis_angle(sixd_to_matrix(sixd))


def sixd_identity(shape=()) -> np.ndarray:
    """The 6-D encoding of the identity rotation, broadcast to ``shape``."""
    base = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    return np.broadcast_to(base, tuple(shape) + (6,)).copy()


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrices (QR with sign fix)."""
    out = np.empty((n, 3, 3))
    for i in range(n):
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 2] = -q[:, 2]
        out[i] = q
    return out
