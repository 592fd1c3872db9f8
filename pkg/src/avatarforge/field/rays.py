"""Ray batches with stratified-uniform plus importance sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ParameterError
from ..meshops import Camera

SAMPLES_PER_RAY = 64


@dataclass
class RayBatch:
    origins: np.ndarray        # (n, 3)
    directions: np.ndarray     # (n, 3) unit vectors
    t: np.ndarray              # (n, Q) strictly increasing sample distances

    def __post_init__(self):
        self.origins = np.asarray(self.origins, dtype=np.float64)
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DimensionError("ray directions must be unit length")
        if np.any(np.diff(self.t, axis=1) <= 0.0):
            raise DimensionError("sample distances must strictly increase")

    @property
    def n_rays(self) -> int:
        return self.origins.shape[0]

    @property
    def n_samples(self) -> int:
        return self.t.shape[1]

    def points(self) -> np.ndarray:
        """All sample points, flattened to (n * Q, 3)."""
        return (self.origins[:, None, :]
                + self.directions[:, None, :] * self.t[:, :, None]).reshape(-1, 3)


def camera_span(camera: Camera, center, bound: float):
    """Near/far distances bracketing a bounding sphere from this camera."""
    dist = float(np.linalg.norm(camera.position - np.asarray(center)))
    near = max(dist - bound, 0.05)
    far = dist + bound
    return near, far


def stratified_samples(n_rays: int, count: int, near: float, far: float,
                       rng: np.random.Generator) -> np.ndarray:
    if near >= far:
        raise ParameterError(f"near {near} must be below far {far}")
    u = (np.arange(count)[None, :] + rng.random((n_rays, count))) / count
    return near + (far - near) * u


def importance_resample(t: np.ndarray, masses: np.ndarray, count: int,
                        rng: np.random.Generator, near: float,
                        far: float) -> np.ndarray:
    """Draw ``count`` extra sample distances per ray from interval masses.

    ``masses[i, j]`` weights the interval [t[i, j], t[i, j+1]].  Rays whose
    total mass is numerically zero fall back to uniform draws in
    [near, far].
    """
    n, bins = masses.shape
    if t.shape[1] != bins + 1:
        raise DimensionError(
            f"need {bins + 1} sample positions for {bins} interval masses")
    total = masses.sum(axis=1)
    u = rng.random((n, count))
    out = np.empty((n, count))

    degenerate = total < 1e-9
    if np.any(degenerate):
        out[degenerate] = near + (far - near) * u[degenerate]

    live = ~degenerate
    if np.any(live):
        pdf = masses[live] / total[live, None]
        cdf = np.cumsum(pdf, axis=1)
        cdf[:, -1] = 1.0
        uu = u[live]
        idx = np.sum(uu[:, :, None] > cdf[:, None, :], axis=2)
        idx = np.minimum(idx, bins - 1)
        padded = np.pad(cdf, ((0, 0), (1, 0)))
        lo_cdf = np.take_along_axis(padded, idx, axis=1)
        mass = np.take_along_axis(pdf, idx, axis=1)
        frac = np.where(mass > 1e-12, (uu - lo_cdf) / np.maximum(mass, 1e-12), 0.5)
        frac = np.clip(frac, 0.0, 1.0)
        t_live = t[live]
        t_lo = np.take_along_axis(t_live, idx, axis=1)
        t_hi = np.take_along_axis(t_live, idx + 1, axis=1)
        out[live] = t_lo + frac * (t_hi - t_lo)
    return out


def merge_sorted(t_a: np.ndarray, t_b: np.ndarray) -> np.ndarray:
    """Union of sample distances per ray, strictly increasing."""
    merged = np.sort(np.concatenate([t_a, t_b], axis=1), axis=1)
    # Nudge exact duplicates so downstream interval math stays well posed.
    eps = 1e-12
    for _ in range(2):
        diffs = np.diff(merged, axis=1)
        if np.all(diffs > 0.0):
            break
        merged[:, 1:] = np.maximum(merged[:, 1:], merged[:, :-1] + eps)
    return merged


def sample_rays(field, camera: Camera, rows, cols, rng: np.random.Generator,
                n_uniform: int = 32, n_importance: int = 32,
                center=(0.0, 0.0, 0.0), near: float | None = None,
                far: float | None = None) -> RayBatch:
    """Rays through given pixels with one coarse-to-fine sampling round.

    A record-free coarse pass over stratified-uniform samples produces the
    rendering weights; the extra samples are drawn proportional to those
    interval masses, then merged and sorted.
    """
    from .rendering import render_weights_raw

    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    dirs = camera.pixel_directions(rows, cols)
    n = dirs.shape[0]
    if near is None or far is None:
        near, far = camera_span(camera, center, field.bound)
    if near >= far:
        raise ParameterError(f"near {near} must be below far {far}")
    origins = np.broadcast_to(camera.position, (n, 3)).copy()

    t_coarse = stratified_samples(n, n_uniform, near, far, rng)
    if n_importance <= 0:
        return RayBatch(origins, dirs, t_coarse)

    pts = (origins[:, None, :] + dirs[:, None, :] * t_coarse[:, :, None])
    f_vals = field.sdf_raw(pts.reshape(-1, 3)).reshape(n, n_uniform)
    weights = render_weights_raw(f_vals, field.s_value())
    # A diverged field can emit non-finite coarse weights; fall back to
    # uniform here so the non-finite loss is caught at the training loop.
    weights = np.where(np.isfinite(weights), weights, 0.0)
    t_fine = importance_resample(t_coarse, weights[:, :-1], n_importance,
                                 rng, near, far)
    return RayBatch(origins, dirs, merge_sorted(t_coarse, t_fine))
