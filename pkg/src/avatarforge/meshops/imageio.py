"""8-bit PNG dumps of float images (value * 255, rounded)."""

from __future__ import annotations

import io
import os
import tempfile

import numpy as np
from PIL import Image as PILImage

from ..errors import FormatError


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, rgb: np.ndarray) -> None:
    path = os.fspath(path)
    img = PILImage.fromarray(to_uint8(np.asarray(rgb)))
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".png")
    try:
        with os.fdopen(fd, "wb") as fh:
            img.save(fh, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_png(path) -> np.ndarray:
    try:
        with PILImage.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise FormatError(f"cannot read PNG {path}: {exc}") from exc
    return arr / 255.0


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(np.asarray(rgb))).save(buf, format="PNG")
    return buf.getvalue()


def png_from_bytes(blob: bytes) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(blob)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise FormatError(f"cannot decode PNG bytes: {exc}") from exc
    return arr / 255.0
