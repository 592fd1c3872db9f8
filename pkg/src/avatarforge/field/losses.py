"""Reconstruction, regularization, and oracle-guided losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffmath import Tensor, clip, log, mul, sub, tabs, tmean, tsum
from ..errors import ParameterError
from .rendering import render_rays, sdf_gradients


@dataclass
class LossWeights:
    """Multipliers for the distance regularizer, mask, and oracle terms."""

    eikonal: float = 0.1
    mask: float = 0.5
    clip_color: float = 1.0
    clip_gray: float = 1.0

    def __post_init__(self):
        for name in ("eikonal", "mask", "clip_color", "clip_gray"):
            if getattr(self, name) < 0:
                raise ParameterError(f"loss weight {name} must be nonnegative")


def binary_cross_entropy(pred: Tensor, target: np.ndarray) -> Tensor:
    p = clip(pred, 1e-6, 1.0 - 1e-6)
    t = Tensor(np.asarray(target, dtype=np.float64))
    one = Tensor(1.0)
    return tmean(-(mul(t, log(p)) + mul(sub(one, t), log(sub(one, p)))))


def masked_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean absolute color error over foreground-weighted pixels."""
    mask = np.asarray(mask, dtype=np.float64)
    total = float(mask.sum())
    if total <= 0.0:
        return Tensor(0.0)
    diff = tabs(sub(pred, Tensor(np.asarray(target, dtype=np.float64))))
    weighted = mul(diff, Tensor(mask[:, None]))
    return tsum(weighted) / (3.0 * total)


def eikonal_loss(field, ray_points: np.ndarray, box_points: np.ndarray) -> Tensor:
    """Mean squared deviation of |grad f| from 1 over mixed sample points."""
    pts = np.concatenate([ray_points, box_points], axis=0)
    grad_p, _ = sdf_gradients(field, pts)
    norms = (tsum(mul(grad_p, grad_p), axis=1) + 1e-12) ** 0.5
    dev = sub(norms, Tensor(1.0))
    return tmean(mul(dev, dev))


def sample_box_points(bound: float, count: int, rng: np.random.Generator):
    return rng.uniform(-bound, bound, size=(count, 3))


def loss_stage1(field, rays, gt_rgb: np.ndarray, gt_mask: np.ndarray,
                weights: LossWeights, rng: np.random.Generator,
                eik_samples: int = 256):
    """Reconstruction loss: masked color L1 + eikonal + mask cross-entropy.

    Returns (total recorded scalar, float parts dict).
    """
    out = render_rays(field, rays, colors=("template",))
    l_color = masked_l1(out["color_template"], gt_rgb, gt_mask)
    l_mask = binary_cross_entropy(out["mask"], gt_mask)

    all_pts = rays.points()
    half = max(eik_samples // 2, 1)
    pick = rng.integers(0, all_pts.shape[0], size=half)
    l_eik = eikonal_loss(field, all_pts[pick],
                         sample_box_points(field.bound, half, rng))

    total = l_color + weights.eikonal * l_eik + weights.mask * l_mask
    parts = {
        "color": float(l_color.data),
        "eikonal": float(l_eik.data),
        "mask": float(l_mask.data),
        "total": float(total.data),
    }
    return total, parts


def oracle_image_loss(image: Tensor, text: str, oracle) -> Tensor:
    """Matching loss 1 - score as a recorded node.

    The forward value comes from the oracle's score; the backward pass
    injects the oracle's pixel-space gradient of that same loss at the
    image boundary of the record.
    """
    value = 1.0 - float(oracle.score(image.data, text))
    out = Tensor(np.asarray(value))
    if image.requires_grad or image.vjp is not None:
        def vjp(g):
            grad = oracle.pixel_grad(image.data, text)
            return (mul(g, Tensor(np.asarray(grad, dtype=np.float64))),)
        out.parents = (image,)
        out.vjp = vjp
    return out


def loss_stage2(field, template_batch: dict, weights: LossWeights,
                rng: np.random.Generator, oracle=None, prompt: str = "",
                image_color: Tensor | None = None,
                image_gray: Tensor | None = None, eik_samples: int = 256):
    """Stage-1 reconstruction plus the two oracle terms.

    ``template_batch`` provides rays/gt_rgb/gt_mask against the frozen
    template renders (through the template color net); the oracle terms
    score the composed stylized and texture-less images.
    """
    total, parts = loss_stage1(field, template_batch["rays"],
                               template_batch["gt_rgb"],
                               template_batch["gt_mask"], weights, rng,
                               eik_samples=eik_samples)
    if weights.clip_color > 0.0 and image_color is not None:
        l_c = oracle_image_loss(image_color, prompt, oracle)
        total = total + weights.clip_color * l_c
        parts["clip_color"] = float(l_c.data)
    if weights.clip_gray > 0.0 and image_gray is not None:
        l_g = oracle_image_loss(image_gray, prompt, oracle)
        total = total + weights.clip_gray * l_g
        parts["clip_gray"] = float(l_g.data)
    parts["total"] = float(total.data)
    return total, parts
