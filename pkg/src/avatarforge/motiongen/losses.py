"""Reference-based motion objectives.

Three terms steer the decoded sequence: candidate-pose reconstruction
with rank-decaying weights, a negative smoothness term that rewards
motion range, and an oracle term that scores a strided subset of frames
with frame weights growing linearly to 1 at the final frame.
"""

from __future__ import annotations

import numpy as np

from ..diffmath import Tensor, min_reduce, mul, reshape, sqrt, sub, tsum
from ..errors import ParameterError
from ..posegen import render_pose
from ..rotations import axis_angle_to_sixd, sixd_to_axis_angle
from ..shapegen import frontal_camera
from .vae import FRAME_DIMS


def pose_rank_weights(k: int) -> np.ndarray:
    """1 - (i - 1)/k for ranks i = 1..k: (1.0, ..., 1/k)."""
    i = np.arange(1, k + 1, dtype=np.float64)
    return 1.0 - (i - 1.0) / k


def frame_schedule(length: int) -> np.ndarray:
    """i / L for frames i = 1..L, increasing to exactly 1."""
    return np.arange(1, length + 1, dtype=np.float64) / length


def candidates_to_sixd(candidate_poses: np.ndarray) -> np.ndarray:
    """(k, 24, 3) axis-angle candidates -> flattened (k, 144) 6-D rows."""
    poses = np.asarray(candidate_poses, dtype=np.float64)
    if poses.ndim != 3 or poses.shape[1:] != (24, 3):
        raise ParameterError(
            f"candidates must be axis-angle poses (k, 24, 3), got {poses.shape}")
    return axis_angle_to_sixd(poses).reshape(-1, FRAME_DIMS)


def loss_pose(theta: Tensor, candidates_sixd: np.ndarray) -> Tensor:
    """Rank-weighted distance from each candidate to its nearest frame.

    ``theta`` is the recorded (L, 144) sequence; candidates are constant
    (k, 144) rows in the same representation.
    """
    cand = np.asarray(candidates_sixd, dtype=np.float64)
    if cand.ndim != 2 or cand.shape[0] == 0:
        raise ParameterError("candidate set must be a non-empty (k, 144) array")
    k = cand.shape[0]
    length = theta.shape[0]
    diff = sub(reshape(theta, (1, length, FRAME_DIMS)),
               Tensor(cand[:, None, :]))
    dist = sqrt(tsum(mul(diff, diff), axis=2))          # (k, L)
    nearest = min_reduce(dist, axis=1)                  # (k,)
    return tsum(mul(nearest, Tensor(pose_rank_weights(k))))


def loss_delta(theta: Tensor) -> Tensor:
    """Negative total variation across adjacent frames."""
    if theta.shape[0] < 2:
        raise ParameterError("motion range needs at least two frames")
    diff = sub(theta[1:], theta[:-1])
    dists = sqrt(tsum(mul(diff, diff), axis=1))
    return -tsum(dists)


def total_variation(frames: np.ndarray) -> float:
    flat = np.asarray(frames, dtype=np.float64).reshape(frames.shape[0], -1)
    return float(np.linalg.norm(np.diff(flat, axis=0), axis=1).sum())


def scored_frame_indices(length: int, stride: int) -> np.ndarray:
    """1-based frames {stride, 2 stride, ...} clipped to the sequence."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    return np.arange(stride, length + 1, stride, dtype=np.int64)


def clip_motion_term(frames: np.ndarray, t_motion: str, body, oracle,
                     stride: int = 6, camera=None,
                     fd_step: float = 1e-2, with_grad: bool = True,
                     render_fn=None):
    """Oracle frame-score term and its gradient w.r.t. the 6-D frames.

    The value is sum over scored frames of (i/L) * (1 - cos score of the
    frame render).  The posed-mesh render is not differentiable here, so
    the gradient comes from one-sided finite differences on the scored
    frames' 6-D coordinates; all other frames get zero gradient.
    ``render_fn(body, axis_angle_pose, camera) -> image`` is pluggable so
    tests can use a smooth stand-in renderer.
    """
    frames = np.asarray(frames, dtype=np.float64)
    length = frames.shape[0]
    camera = camera or frontal_camera(resolution=(32, 32))
    schedule = frame_schedule(length)
    indices = scored_frame_indices(length, stride)
    render_fn = render_fn or render_pose

    text_embed = oracle.embed_text(t_motion)

    def frame_score(frame_sixd: np.ndarray) -> float:
        aa = sixd_to_axis_angle(frame_sixd.reshape(24, 6))
        render = render_fn(body, aa, camera)
        return 1.0 - float(oracle.embed_image(render) @ text_embed)

    value = 0.0
    grad = np.zeros_like(frames) if with_grad else None
    for i in indices:
        row = frames[i - 1].reshape(-1).copy()
        base = frame_score(row)
        value += schedule[i - 1] * base
        if not with_grad:
            continue
        g = np.zeros_like(row)
        for d in range(row.size):
            orig = row[d]
            row[d] = orig + fd_step
            g[d] = (frame_score(row) - base) / fd_step
            row[d] = orig
        grad[i - 1] = schedule[i - 1] * g.reshape(frames.shape[1:])
    return value, grad
