"""Look-at pinhole camera and the float image carrier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y: float                 # vertical field of view, radians
    resolution: tuple            # (H, W)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        fwd = self.look_at - self.position
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise ParameterError("camera position coincides with its look-at point")
        cross = np.linalg.norm(np.cross(fwd / n, self.up / np.linalg.norm(self.up)))
        if cross < 1e-9:
            raise ParameterError("camera up vector is parallel to the view direction")
        if not (0.0 < self.fov_y < np.pi):
            raise ParameterError(f"vertical fov must lie in (0, pi), got {self.fov_y}")

    @property
    def height(self) -> int:
        return int(self.resolution[0])

    @property
    def width(self) -> int:
        return int(self.resolution[1])

    def basis(self):
        """Right-handed (right, up, forward) orthonormal camera frame."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd

    def forward(self) -> np.ndarray:
        return self.basis()[2]

    def pixel_directions(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Unit ray directions through given pixel centers; row 0 is the top."""
        right, up, fwd = self.basis()
        h, w = self.height, self.width
        tan_y = np.tan(self.fov_y / 2.0)
        tan_x = tan_y * w / h
        x = ((np.asarray(cols) + 0.5) / w * 2.0 - 1.0) * tan_x
        y = (1.0 - (np.asarray(rows) + 0.5) / h * 2.0) * tan_y
        dirs = (fwd[None, :] + x[:, None] * right[None, :] + y[:, None] * up[None, :])
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def all_pixel_directions(self) -> np.ndarray:
        rows, cols = np.meshgrid(np.arange(self.height), np.arange(self.width),
                                 indexing="ij")
        return self.pixel_directions(rows.ravel(), cols.ravel())

    def project(self, points: np.ndarray):
        """World points to (row, col, depth); depth is distance along forward."""
        right, up, fwd = self.basis()
        rel = np.asarray(points, dtype=np.float64) - self.position
        cam = rel @ np.stack([right, up, fwd], axis=1)
        depth = cam[:, 2]
        tan_y = np.tan(self.fov_y / 2.0)
        tan_x = tan_y * self.width / self.height
        safe = np.where(np.abs(depth) < 1e-12, 1e-12, depth)
        xn = cam[:, 0] / (safe * tan_x)
        yn = cam[:, 1] / (safe * tan_y)
        col = (xn + 1.0) / 2.0 * self.width - 0.5
        row = (1.0 - yn) / 2.0 * self.height - 0.5
        return row, col, depth


@dataclass
class Image:
    """RGB floats in [0, 1] with an optional mask channel."""

    rgb: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.rgb = np.clip(np.asarray(self.rgb, dtype=np.float64), 0.0, 1.0)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.float64)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]
