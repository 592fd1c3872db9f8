"""Coarse body-shape generation: shape VAE, latent codebook, scored query.

The codebook is built by K-Means over latents drawn from the unit
gaussian of a small VAE trained on shape coefficients.  Queries score
every decoded entry against the prompt RELATIVE to a neutral body and a
neutral text: the cosine between the image-embedding delta and the
text-embedding delta, so attributes like height are judged against a
reference rather than in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import body as bodymod
from .diffmath import (
    AdamState, Mlp, Tensor, adam_step, container, grad_arrays, tmean, tsum,
    mul, sub, exp as texp,
)
from .errors import (
    DegeneratePromptError, NumericalAbortError, ParameterError,
)
from .guidance import warn_if_zero_delta
from .meshops import Camera, ColoredMesh, render_mesh_fast

SHAPE_LATENT_DIM = 16


# ------------------------------------------------------------------ kmeans

@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list


def _pairwise_sq(points: np.ndarray, centers: np.ndarray,
                 chunk: int = 4096) -> np.ndarray:
    """Squared distances (N, K), chunked to bound memory."""
    out = np.empty((points.shape[0], centers.shape[0]))
    c_sq = np.einsum("kd,kd->k", centers, centers)
    for start in range(0, points.shape[0], chunk):
        block = points[start:start + chunk]
        d2 = (np.einsum("nd,nd->n", block, block)[:, None]
              + c_sq[None, :] - 2.0 * block @ centers.T)
        out[start:start + chunk] = np.maximum(d2, 0.0)
    return out


def _kmeans_pp_init(points: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(0, n)]
    d2 = np.einsum("nd,nd->n", points - centers[0], points - centers[0])
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i:] = points[rng.integers(0, n, size=k - i)]
            break
        probs = d2 / total
        centers[i] = points[rng.choice(n, p=probs)]
        new_d2 = np.einsum("nd,nd->n", points - centers[i], points - centers[i])
        d2 = np.minimum(d2, new_d2)
    return centers


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100,
           tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops after ``max_iter`` rounds or when the relative inertia change
    drops below ``tol``.  Empty clusters grab the point farthest from its
    assigned centroid, so K centroids always survive.
    """
    points = np.asarray(points, dtype=np.float64)
    if k > points.shape[0]:
        raise ParameterError(
            f"cannot build {k} clusters from {points.shape[0]} points")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, k, rng)
    history = []
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = _pairwise_sq(points, centers)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(points.shape[0]), labels].sum())
        history.append(inertia)
        new_centers = np.zeros_like(centers)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        np.add.at(new_centers, labels, points)
        empty = counts == 0
        if np.any(empty):
            far = np.argsort(-d2[np.arange(points.shape[0]), labels])
            for slot, point_idx in zip(np.nonzero(empty)[0], far):
                new_centers[slot] = points[point_idx]
                counts[slot] = 1.0
        centers = new_centers / counts[:, None]
        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if prev > 0.0 and (prev - cur) / prev < tol:
                break
    return KMeansResult(centers, labels, history)


# --------------------------------------------------------------- vae core

@dataclass
class VaeTrainResult:
    history: list
    heldout_mse: float


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, sigma) || N(0, 1)) summed over dims, averaged over batch."""
    term = sub(sub(mul(mu, mu) + texp(logvar), Tensor(1.0)), logvar)
    return tmean(tsum(mul(Tensor(0.5), term), axis=1))


def train_vae(encoder: Mlp, decoder: Mlp, data: np.ndarray, epochs: int,
              seed: int, kl_weight: float = 1e-3, lr: float = 1e-3,
              batch_size: int = 64, heldout_frac: float = 0.1,
              sample_latent: bool = True) -> VaeTrainResult:
    """Shared VAE trainer: reconstruction MSE plus a weighted KL term.

    The encoder's output splits in half into mean and log-variance heads.
    The held-out slice never enters training; its reconstruction MSE (via
    the mean latent) is the returned quality number.
    """
    data = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = data.shape[0]
    n_held = max(int(n * heldout_frac), 1)
    perm = rng.permutation(n)
    held, train = data[perm[:n_held]], data[perm[n_held:]]

    latent = decoder.widths[0]
    params = encoder.parameters() + decoder.parameters()
    state = AdamState(params, lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(train.shape[0])
        epoch_loss = 0.0
        batches = 0
        for start in range(0, train.shape[0], batch_size):
            batch = train[order[start:start + batch_size]]
            enc = encoder.forward(Tensor(batch))
            mu = enc[:, :latent]
            logvar = enc[:, latent:]
            if sample_latent:
                eps = rng.standard_normal((batch.shape[0], latent))
                z = mu + mul(texp(mul(Tensor(0.5), logvar)), Tensor(eps))
            else:
                z = mu
            recon = decoder.forward(z)
            err = sub(recon, Tensor(batch))
            loss = tmean(mul(err, err)) + kl_weight * gaussian_kl(mu, logvar)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericalAbortError(
                    f"non-finite VAE loss at epoch {epoch}")
            grads = grad_arrays(loss, params)
            adam_step(state, params, grads)
            epoch_loss += val
            batches += 1
        history.append({"epoch": epoch, "loss": epoch_loss / max(batches, 1)})

    enc = encoder.forward_raw(held)
    recon = decoder.forward_raw(enc[:, :latent])
    heldout_mse = float(np.mean((recon - held) ** 2))
    return VaeTrainResult(history, heldout_mse)


# -------------------------------------------------------------- shape vae

class ShapeVae:
    """Two-layer encoder/decoder pair over 10-dim shape coefficients."""

    def __init__(self, seed: int = 0, hidden: int = 32):
        self.seed = int(seed)
        self.hidden = int(hidden)
        self.encoder = Mlp([bodymod.SHAPE_DIM, hidden, 2 * SHAPE_LATENT_DIM],
                           hidden_activation="relu", seed=seed)
        self.decoder = Mlp([SHAPE_LATENT_DIM, hidden, bodymod.SHAPE_DIM],
                           hidden_activation="relu", seed=seed + 1)

    def encode_mean(self, betas: np.ndarray) -> np.ndarray:
        return self.encoder.forward_raw(
            np.asarray(betas, dtype=np.float64))[:, :SHAPE_LATENT_DIM]

    def decode(self, latents: np.ndarray) -> np.ndarray:
        return self.decoder.forward_raw(np.asarray(latents, dtype=np.float64))


def synthetic_beta_corpus(count: int, seed: int = 0,
                          components: int = 4) -> np.ndarray:
    """Gaussian-mixture stand-in for a fitted shape-coefficient population."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(-1.5, 1.5, size=(components, bodymod.SHAPE_DIM))
    sigmas = rng.uniform(0.2, 0.6, size=(components, bodymod.SHAPE_DIM))
    which = rng.integers(0, components, size=count)
    out = means[which] + sigmas[which] * rng.standard_normal(
        (count, bodymod.SHAPE_DIM))
    return np.clip(out, -4.0, 4.0)


def train_shape_vae(corpus: np.ndarray, epochs: int = 200, seed: int = 0,
                    hidden: int = 32, **kwargs):
    """Returns (vae, train result); corpus must hold >= 1000 samples."""
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.shape[0] < 1000:
        raise ParameterError(
            f"shape corpus needs >= 1000 samples, got {corpus.shape[0]}")
    vae = ShapeVae(seed=seed, hidden=hidden)
    result = train_vae(vae.encoder, vae.decoder, corpus, epochs, seed, **kwargs)
    return vae, result


# --------------------------------------------------------------- codebook

@dataclass
class ShapeCodebook:
    centroids: np.ndarray       # (K, 16)
    betas: np.ndarray           # (K, 10) decoded entries
    neutral_beta: np.ndarray    # decoded all-zero latent
    seed: int

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    def save(self, path) -> None:
        header = {"k": self.size, "latent_dim": SHAPE_LATENT_DIM,
                  "seed": self.seed}
        container.save_container(path, container.SHAPE_CODEBOOK_MAGIC, header, {
            "centroids": self.centroids,
            "betas": self.betas,
            "neutral_beta": self.neutral_beta,
        })

    @classmethod
    def load(cls, path) -> "ShapeCodebook":
        header, arrays = container.load_container(
            path, container.SHAPE_CODEBOOK_MAGIC)
        return cls(arrays["centroids"], arrays["betas"],
                   arrays["neutral_beta"], int(header.get("seed", 0)))


def build_shape_codebook(vae: ShapeVae, samples: int = 40960, k: int = 2048,
                         seed: int = 0) -> ShapeCodebook:
    """K-Means over unit-gaussian latent draws, decoded to shape entries."""
    if samples < k:
        raise ParameterError(f"need at least {k} samples, got {samples}")
    rng = np.random.default_rng(seed)
    latents = rng.standard_normal((samples, SHAPE_LATENT_DIM))
    result = kmeans(latents, k, seed=seed)
    betas = np.clip(vae.decode(result.centroids), -4.999, 4.999)
    neutral = np.clip(vae.decode(np.zeros((1, SHAPE_LATENT_DIM)))[0],
                      -4.999, 4.999)
    return ShapeCodebook(result.centroids, betas, neutral, seed)


# ----------------------------------------------------------------- query

def frontal_camera(resolution=(64, 64), distance: float = 1.6) -> Camera:
    return Camera(np.array([0.0, 0.0, distance]), np.zeros(3),
                  np.array([0.0, 1.0, 0.0]), np.pi / 3, resolution)


def render_shaped_body(body: bodymod.TemplateBody, beta: np.ndarray,
                       camera: Camera, pose: np.ndarray | None = None) -> np.ndarray:
    """Posed render of a shaped body from a fixed camera (rgb array)."""
    pose = bodymod.theta_stand() if pose is None else pose
    rest = bodymod.apply_shape(body, beta)
    verts = bodymod.lbs(body, rest, pose)
    mesh = ColoredMesh(verts, body.faces, bodymod.default_vertex_colors(body))
    return render_mesh_fast(mesh, camera, ambient=0.35).rgb


@dataclass
class ShapeQueryResult:
    index: int
    beta: np.ndarray
    scores: np.ndarray          # alignment cosine per entry (nan = skipped)


def query_shape(codebook: ShapeCodebook, t_shape: str, t_neutral: str,
                body: bodymod.TemplateBody, oracle, camera: Camera | None = None,
                maximize_raw_score: bool = False) -> ShapeQueryResult:
    """Pick the codebook entry whose render-delta best aligns with the
    prompt-delta.

    Scores are cosines between (entry embedding - neutral-body embedding)
    and (prompt embedding - neutral-prompt embedding).  By default the
    best-aligned entry wins; ``maximize_raw_score`` flips to picking the
    least aligned, for score-sign experiments.  Entries whose image delta
    is numerically zero are skipped with a warning.
    """
    camera = camera or frontal_camera()
    d_text = oracle.embed_text(t_shape) - oracle.embed_text(t_neutral)
    norm_t = np.linalg.norm(d_text)
    if norm_t <= 1e-9:
        raise DegeneratePromptError(
            f"shape prompt {t_shape!r} is indistinguishable from the "
            f"neutral prompt {t_neutral!r}")
    d_text = d_text / norm_t

    neutral_embed = oracle.embed_image(
        render_shaped_body(body, codebook.neutral_beta, camera))
    scores = np.full(codebook.size, np.nan)
    for i in range(codebook.size):
        render = render_shaped_body(body, codebook.betas[i], camera)
        delta = oracle.embed_image(render) - neutral_embed
        if warn_if_zero_delta(delta, f"codebook entry {i}"):
            continue
        scores[i] = float(delta / np.linalg.norm(delta) @ d_text)

    valid = np.isfinite(scores)
    if not np.any(valid):
        raise DegeneratePromptError("every codebook entry was skipped")
    pick = scores.copy()
    if maximize_raw_score:
        pick[~valid] = np.inf
        index = int(np.argmin(pick))
    else:
        pick[~valid] = -np.inf
        index = int(np.argmax(pick))
    return ShapeQueryResult(index, codebook.betas[index].copy(), scores)
