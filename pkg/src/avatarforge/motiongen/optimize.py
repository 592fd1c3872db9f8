"""Latent-space motion synthesis against candidate poses and the oracle."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field as dc_field

import numpy as np

from ..diffmath import AdamState, Tensor, adam_step, grad_arrays, mul, tsum
from ..errors import NumericalAbortError, ParameterError
from ..rotations import sixd_to_axis_angle
from .losses import candidates_to_sixd, clip_motion_term, loss_delta, loss_pose
from .vae import FRAME_DIMS, MotionSequence, MotionVae


@dataclass
class MotionWeights:
    kl: float = 1e-4            # training-time balance (kept for config)
    delta: float = 0.05
    clip: float = 0.1
    clip_stride: int = 6

    def __post_init__(self):
        if self.delta < 0 or self.clip < 0 or self.kl < 0:
            raise ParameterError("motion loss weights must be nonnegative")


@dataclass
class MotionResult:
    sequence: MotionSequence
    history: list = dc_field(default_factory=list)


def optimize_motion_latent(vae: MotionVae, candidate_poses: np.ndarray,
                           t_motion: str, oracle, iterations: int,
                           weights: MotionWeights | None = None,
                           lr: float = 1e-2, seed: int = 0, body=None,
                           camera=None, log_every: int = 25,
                           render_fn=None) -> MotionResult:
    """Adam on the decoder latent, starting from zero.

    The decode is deterministic (no sampling at inference), so the whole
    optimization is a pure function of the configuration.  The oracle
    term's finite-difference gradient enters the record as a surrogate
    inner product against the decoded frames.
    """
    weights = weights or MotionWeights()
    if candidate_poses is None or len(candidate_poses) == 0:
        raise ParameterError("candidate pose set must be non-empty")
    cand = candidates_to_sixd(candidate_poses)
    if weights.clip > 0.0 and body is None:
        raise ParameterError("oracle term needs a body to render poses")

    z = Tensor(np.zeros(vae.latent_dim), requires_grad=True)
    state = AdamState([z], lr=lr)
    history = []
    _ = seed  # decoding is deterministic; kept for config fingerprints
    last_good = z.data.copy()

    for it in range(1, iterations + 1):
        theta = vae.decode(z)                       # (1, L, 144)
        theta_flat = theta[0]                       # (L, 144)
        l_pose = loss_pose(theta_flat, cand)
        total = l_pose
        parts = {"pose": float(l_pose.data)}
        if weights.delta > 0.0:
            l_delta = loss_delta(theta_flat)
            total = total + weights.delta * l_delta
            parts["delta"] = float(l_delta.data)
        if weights.clip > 0.0:
            frames = theta_flat.data.reshape(vae.length, 24, 6)
            value, grad = clip_motion_term(
                frames, t_motion, body, oracle,
                stride=weights.clip_stride, camera=camera,
                render_fn=render_fn)
            surrogate = tsum(mul(theta_flat,
                                 Tensor(grad.reshape(vae.length, FRAME_DIMS))))
            total = total + weights.clip * (surrogate
                                            - float(surrogate.data) + value)
            parts["clip"] = value
        parts["total"] = float(total.data)
        if not np.isfinite(parts["total"]):
            raise NumericalAbortError(
                f"non-finite motion loss at iteration {it} "
                f"(last good latent kept)")
        (g,) = grad_arrays(total, [z])
        last_good = z.data.copy()
        adam_step(state, [z], [g])
        if it % log_every == 0 or it == iterations or it == 1:
            parts["iteration"] = it
            history.append(parts)

    if not np.all(np.isfinite(z.data)):
        z.data = last_good
    return MotionResult(vae.decode_sequence(z.data), history)


# ------------------------------------------------------------- export

def export_motion_json(path, sequence: MotionSequence, fps: int = 30) -> None:
    """Write {"fps", "frames": [{joints_axis_angle, root_translation}]}."""
    frames = []
    for i in range(sequence.length):
        aa = sixd_to_axis_angle(sequence.frames[i])
        frames.append({
            "joints_axis_angle": [[float(v) for v in row] for row in aa],
            "root_translation": [float(v) for v in sequence.root_translation[i]],
        })
    payload = {"fps": int(fps), "frames": frames}
    path = os.fspath(path)
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_motion_json(path) -> tuple:
    """Returns (axis-angle poses (L, 24, 3), root translations, fps)."""
    with open(path) as fh:
        payload = json.load(fh)
    poses = np.asarray([f["joints_axis_angle"] for f in payload["frames"]],
                       dtype=np.float64)
    roots = np.asarray([f["root_translation"] for f in payload["frames"]],
                       dtype=np.float64)
    return poses, roots, int(payload.get("fps", 30))
