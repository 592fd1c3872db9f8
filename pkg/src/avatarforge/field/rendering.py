"""Volume rendering of the implicit avatar.

The per-sample weights follow the discrete occlusion-aware scheme for
signed distance fields: section opacity

    alpha_i = max((cdf(f_i) - cdf(f_{i+1})) / cdf(f_i), 0)

with ``cdf`` the logistic CDF at the trainable sharpness, accumulated
front-to-back.  Weight mass peaks at the first crossing, and every
quantity here lives on the gradient record, including surface normals
obtained as input gradients of the distance net.
"""

from __future__ import annotations

import numpy as np

from ..diffmath import (
    Tensor, clip, concat, cumsum, exp, gradients, log, maximum, mul,
    positional_encode, relu, reshape, sigmoid, sqrt, sub, tsum,
)
from ..errors import DimensionError
from .rays import RayBatch

_ALPHA_EPS = 1e-12
_TRANS_EPS = 1e-10


def render_weights(f_vals: Tensor, s: Tensor) -> Tensor:
    """Per-sample rendering weights for distance values of shape (n, Q)."""
    if f_vals.ndim != 2 or f_vals.shape[1] < 2:
        raise DimensionError(
            f"need at least two samples per ray, got {f_vals.shape}")
    phi = sigmoid(mul(f_vals, s))
    phi_now = phi[:, :-1]
    phi_next = phi[:, 1:]
    alpha = relu(sub(phi_now, phi_next) / (phi_now + _ALPHA_EPS))
    trans_terms = log(maximum(sub(Tensor(1.0), alpha), Tensor(_TRANS_EPS)))
    accum = cumsum(trans_terms, axis=1)
    ones = Tensor(np.zeros((alpha.shape[0], 1)))
    trans = exp(concat([ones, accum[:, :-1]], axis=1))
    weights = mul(alpha, trans)
    pad = Tensor(np.zeros((alpha.shape[0], 1)))
    return concat([weights, pad], axis=1)


def render_weights_raw(f_vals: np.ndarray, s: float) -> np.ndarray:
    """Record-free twin of :func:`render_weights` for sampling loops."""
    f_vals = np.asarray(f_vals, dtype=np.float64)
    phi = 0.5 * (1.0 + np.tanh(0.5 * s * f_vals))
    alpha = np.maximum((phi[:, :-1] - phi[:, 1:]) / (phi[:, :-1] + _ALPHA_EPS), 0.0)
    trans = np.exp(np.cumsum(np.log(np.maximum(1.0 - alpha, _TRANS_EPS)), axis=1))
    trans = np.concatenate([np.ones((alpha.shape[0], 1)), trans[:, :-1]], axis=1)
    weights = alpha * trans
    return np.concatenate([weights, np.zeros((alpha.shape[0], 1))], axis=1)


def render_rays(field, rays: RayBatch, *, colors=("stylized",),
                need_normals: bool = False, light=None, ambient: float = 0.0,
                eikonal_index: np.ndarray | None = None) -> dict:
    """One fused differentiable pass over a ray batch.

    Returns a dict with recorded tensors: ``weights`` (n, Q), ``mask``
    (n,), per-net colors, and when requested unit ``normals`` (n, 3) with
    a boolean ``normals_valid`` array, the shading factor, ``gray`` (n,)
    and ``shaded`` (n, 3) values, and the gradient norms at the eikonal
    subset of sample points.
    """
    n, q = rays.n_rays, rays.n_samples
    pts = rays.points()
    need_grad = need_normals or eikonal_index is not None
    p = Tensor(pts, requires_grad=need_grad)

    f_flat = field.f.forward(positional_encode(p, field.sdf_bands))
    f_vals = reshape(f_flat, (n, q))
    s = field.s()
    weights = render_weights(f_vals, s)
    mask = tsum(weights, axis=1)
    out = {"weights": weights, "mask": mask, "f": f_vals}

    if colors:
        enc_c = positional_encode(p, field.color_bands)
        w3 = reshape(weights, (n, q, 1))
        for which in colors:
            net = field.c_c if which == "stylized" else field.c
            c_flat = net.forward(enc_c)
            c_samples = reshape(c_flat, (n, q, 3))
            out[f"color_{which}"] = tsum(mul(w3, c_samples), axis=1)

    if need_grad:
        (grad_p,) = gradients(tsum(f_flat), [p])
        out["sdf_grad"] = grad_p
        if eikonal_index is not None:
            sub_grad = grad_p[eikonal_index] if eikonal_index.size else grad_p
            norms = sqrt(tsum(mul(sub_grad, sub_grad), axis=1) + 1e-12)
            out["grad_norms"] = norms

    if need_normals:
        grad_p = out["sdf_grad"]
        g_samples = reshape(grad_p, (n, q, 3))
        accum = tsum(mul(reshape(weights, (n, q, 1)), g_samples), axis=1)
        lengths = sqrt(tsum(mul(accum, accum), axis=1))
        valid = lengths.data > 1e-9
        unit = accum / reshape(maximum(lengths, Tensor(1e-9)), (n, 1))
        out["normals"] = unit
        out["normals_valid"] = valid
        if light is not None:
            light = np.asarray(light, dtype=np.float64)
            ndotl = tsum(mul(unit, Tensor(light[None, :])), axis=1)
            lit = relu(mul(ndotl, Tensor(valid.astype(np.float64))))
            factor = clip(Tensor(float(ambient)) + mul(
                Tensor(1.0 - float(ambient)), lit), 0.0, 1.0)
            out["shade_factor"] = factor
            out["gray"] = mul(mask, factor)
            if "color_stylized" in out:
                out["shaded"] = mul(reshape(factor, (n, 1)),
                                    out["color_stylized"])
    return out


# -- thin single-quantity wrappers ---------------------------------------

def render_color(field, rays: RayBatch, which: str = "stylized") -> Tensor:
    return render_rays(field, rays, colors=(which,))[f"color_{which}"]


def render_mask(field, rays: RayBatch) -> Tensor:
    return render_rays(field, rays, colors=())["mask"]


def render_normal(field, rays: RayBatch):
    out = render_rays(field, rays, colors=(), need_normals=True)
    return out["normals"], out["normals_valid"]


def render_gray(field, rays: RayBatch, light, ambient: float) -> Tensor:
    _check_shading(light, ambient)
    out = render_rays(field, rays, colors=(), need_normals=True,
                      light=light, ambient=ambient)
    return out["gray"]


def render_shaded(field, rays: RayBatch, light, ambient: float) -> Tensor:
    _check_shading(light, ambient)
    out = render_rays(field, rays, colors=("stylized",), need_normals=True,
                      light=light, ambient=ambient)
    return out["shaded"]


def _check_shading(light, ambient: float) -> None:
    light = np.asarray(light, dtype=np.float64)
    if abs(np.linalg.norm(light) - 1.0) > 1e-6:
        raise DimensionError("light direction must be unit length")
    if not (0.0 <= ambient <= 1.0):
        raise DimensionError(f"ambient must lie in [0, 1], got {ambient}")


def sdf_gradients(field, points: np.ndarray):
    """Recorded input gradients of the distance net at arbitrary points."""
    p = Tensor(np.asarray(points, dtype=np.float64), requires_grad=True)
    f_flat = field.f.forward(positional_encode(p, field.sdf_bands))
    (grad_p,) = gradients(tsum(f_flat), [p])
    return grad_p, f_flat
