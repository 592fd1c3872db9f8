"""Silhouette mask utilities and the ray-budget resolution rule."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.ndimage import maximum_filter

from ..errors import DegeneracyError, ParameterError


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation by a Chebyshev disk (square) of given radius."""
    if radius < 0:
        raise ParameterError(f"dilation radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    return maximum_filter(mask, size=2 * radius + 1, mode="constant", cval=0)


def coverage_ratio(mask: np.ndarray) -> float:
    """Fraction of set pixels; warns on a fully empty (degenerate) mask."""
    mask = np.asarray(mask, dtype=bool)
    ratio = float(mask.mean()) if mask.size else 0.0
    if ratio == 0.0:
        warnings.warn("silhouette mask is empty; coverage ratio is degenerate",
                      RuntimeWarning, stacklevel=2)
    return ratio


def effective_resolution(h_max: int, w_max: int, r_s: float) -> tuple:
    """Square resolution spending the h*w/r_s ray budget of a partial mask."""
    if not (0.0 < r_s <= 1.0):
        raise DegeneracyError(
            f"coverage ratio must lie in (0, 1], got {r_s}")
    if r_s == 1.0:
        return int(h_max), int(w_max)
    budget = h_max * w_max / r_s
    side = int(np.floor(np.sqrt(budget)))
    return side, side
