"""Motion synthesis: transformer VAE and reference-based latent search."""

from .vae import (
    FRAME_DIMS, SEQUENCE_LENGTH, MotionSequence, MotionTrainResult,
    MotionVae, identity_sequence, kl_to_unit_gaussian,
    sequence_from_axis_angle, synthetic_motion_corpus, train_motion_vae,
)
from .losses import (
    candidates_to_sixd, clip_motion_term, frame_schedule, loss_delta,
    loss_pose, pose_rank_weights, scored_frame_indices, total_variation,
)
from .optimize import (
    MotionResult, MotionWeights, export_motion_json, load_motion_json,
    optimize_motion_latent,
)

__all__ = [name for name in dir() if not name.startswith("_")]
