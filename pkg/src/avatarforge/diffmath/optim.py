"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


class AdamState:
    """Moment accumulators for one parameter list.

    ``t`` counts completed steps; both moment lists hold zeros until the
    first step runs.
    """

    def __init__(self, params, lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, lr_scales=None):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        # Optional per-parameter multiplier on the learning rate.
        self.lr_scales = [1.0] * len(self.m) if lr_scales is None \
            else [float(s) for s in lr_scales]


def adam_step(state: AdamState, params: list[Tensor], grads) -> tuple[list[Tensor], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"adam_step got {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment slots")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.shape} (slot {i})")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        step_lr = state.lr * state.lr_scales[i]
        p.data = p.data - step_lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
