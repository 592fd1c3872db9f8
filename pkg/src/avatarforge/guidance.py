"""Text-image guidance: oracle interface, mocks, HTTP client, augmentations.

Everything that touches image-text scoring funnels through the
``GuidanceOracle`` protocol: unit-norm text and image embeddings, a
cosine score, and the pixel-space gradient of the matching loss
``1 - cos``.  Deterministic mock oracles keep the whole numeric stack
runnable offline; the HTTP client speaks the wire protocol documented in
docs/guidance_protocol.md.
"""

from __future__ import annotations

import base64
import hashlib
import time
import warnings
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
import requests
from scipy.ndimage import gaussian_filter

from .errors import (
    OracleProtocolError, OracleUnavailableError, ParameterError,
)
from .meshops import Camera, png_bytes

BACKGROUND_KINDS = ("black", "white", "noise", "chessboard")


@runtime_checkable
class GuidanceOracle(Protocol):
    """Provider of joint image-text embeddings and pixel-space gradients."""

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...

    def score(self, image: np.ndarray, text: str) -> float: ...

    def pixel_grad(self, image: np.ndarray, text: str) -> np.ndarray: ...


def clip_loss(oracle: GuidanceOracle, image: np.ndarray, text: str) -> float:
    """Matching loss 1 - cos(embed_image, embed_text); range [0, 2]."""
    return 1.0 - float(oracle.score(image, text))


def _normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else v


class TargetImageOracle:
    """Mock oracle whose text embedding is a fixed target image.

    Image embeddings are the normalized flattened pixels, so the score is
    the cosine between the candidate image and the target, and the pixel
    gradient has a closed form.  Images must match the target resolution.
    """

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)
        self._target_unit = _normalize(self.target)

    def embed_text(self, text: str) -> np.ndarray:
        return self._target_unit.copy()

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.target.shape:
            raise ParameterError(
                f"image shape {image.shape} != target {self.target.shape}")
        return _normalize(image)

    def score(self, image: np.ndarray, text: str) -> float:
        return float(self.embed_image(image) @ self.embed_text(text))

    def pixel_grad(self, image: np.ndarray, text: str) -> np.ndarray:
        """d(1 - cos)/d(pixels), the adjoint of normalize-then-dot."""
        image = np.asarray(image, dtype=np.float64)
        x = image.reshape(-1)
        t = self._target_unit
        n = np.linalg.norm(x)
        if n < 1e-12:
            return np.zeros_like(image)
        cos = (x @ t) / n
        grad = -(t / n - cos * x / (n * n))
        return grad.reshape(image.shape)


class HashEmbeddingOracle:
    """Mock oracle with unit embeddings seeded by a stable content hash.

    Scores are deterministic but unstructured, which is exactly what
    codebook-query tests need.  The score is locally constant almost
    everywhere, so the pixel gradient is zero by definition.
    """

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ParameterError("embedding dimension must be >= 2")
        self.dim = int(dim)

    def _from_bytes(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        return _normalize(rng.standard_normal(self.dim))

    def embed_text(self, text: str) -> np.ndarray:
        return self._from_bytes(b"text:" + text.encode("utf-8"))

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        arr = np.ascontiguousarray(np.asarray(image, dtype=np.float64))
        return self._from_bytes(b"image:" + arr.tobytes())

    def score(self, image: np.ndarray, text: str) -> float:
        return float(self.embed_image(image) @ self.embed_text(text))

    def pixel_grad(self, image: np.ndarray, text: str) -> np.ndarray:
        return np.zeros_like(np.asarray(image, dtype=np.float64))


class HttpOracle:
    """Client for a guidance service speaking the JSON-over-HTTP protocol."""

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 2):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = requests.Session()
        health = self._request("GET", "/health")
        if health.get("status") != "ok":
            raise OracleProtocolError(f"service unhealthy: {health!r}")
        self.embed_dim = int(health.get("embed_dim", 0))
        if self.embed_dim <= 0:
            raise OracleProtocolError(f"bad embed_dim in {health!r}")

    def _request(self, method: str, path: str, payload=None) -> dict:
        url = self.base_url + path
        last = None
        for attempt in range(self.retries + 1):
            try:
                if method == "GET":
                    resp = self._session.get(url, timeout=self.timeout)
                else:
                    resp = self._session.post(url, json=payload,
                                              timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(0.2 * (attempt + 1))
            except requests.HTTPError as exc:
                body = exc.response.text[:200] if exc.response is not None else ""
                raise OracleProtocolError(
                    f"{method} {path} failed: {exc} body={body!r}") from exc
            except ValueError as exc:
                raise OracleProtocolError(
                    f"{method} {path} returned non-JSON body") from exc
        raise OracleUnavailableError(
            f"guidance service unreachable at {url}: {last}")

    def _check_unit(self, vec: np.ndarray, what: str) -> np.ndarray:
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > 1e-4:
            raise OracleProtocolError(
                f"{what} embedding norm {norm:.6f} violates the unit-norm contract")
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        out = self._request("POST", "/embed_text", {"text": text})
        vec = np.asarray(out.get("embedding"), dtype=np.float64)
        return self._check_unit(vec, "text")

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        blob = base64.b64encode(png_bytes(image)).decode("ascii")
        out = self._request("POST", "/embed_image", {"png_base64": blob})
        vec = np.asarray(out.get("embedding"), dtype=np.float64)
        return self._check_unit(vec, "image")

    def score(self, image: np.ndarray, text: str) -> float:
        blob = base64.b64encode(png_bytes(image)).decode("ascii")
        out = self._request("POST", "/score", {"png_base64": blob, "text": text})
        return float(out["score"])

    def pixel_grad(self, image: np.ndarray, text: str) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        blob = base64.b64encode(png_bytes(image)).decode("ascii")
        out = self._request("POST", "/pixel_grad",
                            {"png_base64": blob, "text": text})
        grad = np.asarray(out["grad"], dtype=np.float64)
        h, w = int(out["height"]), int(out["width"])
        if grad.shape != (h, w, 3) or (h, w) != image.shape[:2]:
            raise OracleProtocolError(
                f"pixel_grad shape {grad.shape} does not match image "
                f"{image.shape}")
        return grad


def http_oracle(base_url: str, timeout: float = 30.0) -> HttpOracle:
    return HttpOracle(base_url, timeout=timeout)


# ----------------------------------------------------------- augmentations

def make_background(kind: str, height: int, width: int,
                    rng: np.random.Generator) -> np.ndarray:
    """A full background image of the requested kind."""
    if kind == "black":
        return np.zeros((height, width, 3))
    if kind == "white":
        return np.ones((height, width, 3))
    if kind == "noise":
        return np.clip(rng.normal(0.5, 0.2, size=(height, width, 3)), 0.0, 1.0)
    if kind == "chessboard":
        block = int(rng.integers(8, 33))
        rows = (np.arange(height) // block) % 2
        cols = (np.arange(width) // block) % 2
        board = (rows[:, None] ^ cols[None, :]).astype(np.float64)
        sigma = rng.uniform(1.0, 4.0)
        board = gaussian_filter(board, sigma=sigma, mode="nearest")
        return np.repeat(board[:, :, None], 3, axis=2)
    raise ParameterError(f"unknown background kind {kind!r}")


def augment_background(image: np.ndarray, mask: np.ndarray, kind: str,
                       rng: np.random.Generator) -> np.ndarray:
    """Replace pixels where mask = 0; foreground pixels never change."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != image.shape[:2]:
        raise ParameterError(
            f"mask shape {mask.shape} does not match image {image.shape}")
    bg = make_background(kind, image.shape[0], image.shape[1], rng)
    keep = mask[:, :, None]
    return image * keep + bg * (1.0 - keep)


# ----------------------------------------------------------------- prompts

@dataclass
class PromptSet:
    appearance: str
    face: str
    back: str
    face_period: int = 4

    def __post_init__(self):
        if not self.appearance:
            raise ParameterError("appearance prompt must be non-empty")


def augment_prompts(t_app: str, face_period: int = 4) -> PromptSet:
    """Two derived prompts: a face view and a back view of the subject."""
    if not t_app:
        raise ParameterError("appearance prompt must be non-empty")
    return PromptSet(
        appearance=t_app,
        face=f"the face of {t_app}",
        back=f"the back of {t_app}",
        face_period=face_period,
    )


def select_prompt(prompts: PromptSet, iteration: int, azimuth: float,
                  face_point: np.ndarray | None = None):
    """Prompt for this iteration, plus a look-at override on face rounds.

    Every ``face_period``-th iteration (counting from 1) is a face round:
    the face prompt is returned together with ``face_point`` so the caller
    can aim the camera at it.  Otherwise the back prompt applies whenever
    the camera azimuth looks at the back half-space (|azimuth| > pi/2).
    """
    if iteration % prompts.face_period == 0:
        return prompts.face, face_point
    if abs(azimuth) > np.pi / 2:
        return prompts.back, None
    return prompts.appearance, None


# ----------------------------------------------------------------- sampling

@dataclass
class CameraSampler:
    """Random look-at cameras on a spherical shell around the subject.

    Radius is uniform in (1, 2); the polar angle is uniform over the full
    circle; the azimuth is normal with sigma pi/3 so most views face the
    front; the look-at point is normal with sigma 0.1, clipped to +/-0.3.
    """

    radius_range: tuple = (1.0, 2.0)
    azimuth_sigma: float = np.pi / 3.0
    look_sigma: float = 0.1
    look_clip: float = 0.3
    fov_y: float = np.pi / 3.0
    resolution: tuple = (64, 64)
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def sample(self, rng: np.random.Generator):
        """Returns (camera, polar, azimuth)."""
        radius = rng.uniform(*self.radius_range)
        polar = rng.uniform(0.0, 2.0 * np.pi)
        azimuth = rng.normal(0.0, self.azimuth_sigma)
        look = np.clip(rng.normal(0.0, self.look_sigma, size=3),
                       -self.look_clip, self.look_clip) + self.center
        # Keep the view direction off the up axis so the camera frame exists.
        eps = 1e-3
        if abs(np.sin(polar)) < eps:
            polar += eps
        position = self.center + radius * np.array([
            np.abs(np.sin(polar)) * np.sin(azimuth),
            np.cos(polar),
            np.abs(np.sin(polar)) * np.cos(azimuth),
        ])
        cam = Camera(position, look, np.array([0.0, 1.0, 0.0]),
                     self.fov_y, self.resolution)
        return cam, polar, azimuth


@dataclass
class LightSampler:
    """Light directions near the camera direction, plus an ambient level.

    Both angular offsets are uniform in (-pi/4, pi/4); ambient is uniform
    in (0, 0.2) and the diffuse weight is its complement.
    """

    offset_range: float = np.pi / 4.0
    ambient_range: tuple = (0.0, 0.2)

    def sample(self, camera: Camera, rng: np.random.Generator):
        """Returns (unit light direction toward the light, ambient)."""
        toward_cam = camera.position - camera.look_at
        toward_cam = toward_cam / np.linalg.norm(toward_cam)
        # Spherical offsets around the camera direction.
        x1 = rng.uniform(-self.offset_range, self.offset_range)
        x2 = rng.uniform(-self.offset_range, self.offset_range)
        polar = np.arccos(np.clip(toward_cam[1], -1.0, 1.0))
        azim = np.arctan2(toward_cam[0], toward_cam[2])
        polar = np.clip(polar + x1, 1e-6, np.pi - 1e-6)
        azim = azim + x2
        light = np.array([
            np.sin(polar) * np.sin(azim),
            np.cos(polar),
            np.sin(polar) * np.cos(azim),
        ])
        ambient = rng.uniform(*self.ambient_range)
        return light, ambient


def warn_if_zero_delta(delta: np.ndarray, what: str) -> bool:
    """True when a relative-embedding delta is numerically zero (skippable)."""
    if np.linalg.norm(delta) <= 1e-9:
        warnings.warn(f"zero relative embedding for {what}; entry skipped",
                      RuntimeWarning, stacklevel=2)
        return True
    return False
