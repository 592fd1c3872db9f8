"""The implicit avatar: distance/color networks, rendering, and training."""

from .avatar import AvatarField
from .rays import (
    RayBatch, SAMPLES_PER_RAY, camera_span, importance_resample,
    merge_sorted, sample_rays, stratified_samples,
)
from .rendering import (
    render_color, render_gray, render_mask, render_normal, render_rays,
    render_shaded, render_weights, render_weights_raw, sdf_gradients,
)
from .losses import (
    LossWeights, binary_cross_entropy, eikonal_loss, loss_stage1,
    loss_stage2, masked_l1, oracle_image_loss, sample_box_points,
)
from .training import (
    FitResult, SculptConfig, SculptStats, ViewRender, fit_stage1,
    mask_iou, render_image_raw, render_template_views, ring_cameras,
    sculpt_stage2,
)

__all__ = [name for name in dir() if not name.startswith("_")]
