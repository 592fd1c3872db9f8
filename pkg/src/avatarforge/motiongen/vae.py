"""Transformer motion VAE over 6-D joint-rotation sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffmath import (
    AdamState, Tensor, adam_step, add, broadcast_to, container, exp,
    grad_arrays, log, mul, reshape, sub, tmean, tsum,
)
from ..errors import DimensionError, FormatError, NumericalAbortError
from ..rotations import axis_angle_to_sixd, sixd_identity
from .transformer import DecoderLayer, EncoderLayer, Linear, sinusoidal_embedding

SEQUENCE_LENGTH = 60
FRAME_DIMS = 24 * 6


@dataclass
class MotionSequence:
    """L frames of 24 joint rotations in the 6-D representation."""

    frames: np.ndarray                    # (L, 24, 6)
    root_translation: np.ndarray = None   # (L, 3), zeros by default

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (24, 6):
            raise DimensionError(
                f"frames must have shape (L, 24, 6), got {self.frames.shape}")
        if self.root_translation is None:
            self.root_translation = np.zeros((self.frames.shape[0], 3))

    @property
    def length(self) -> int:
        return self.frames.shape[0]


def sequence_from_axis_angle(poses: np.ndarray) -> MotionSequence:
    """(L, 24, 3) axis angles -> 6-D motion sequence."""
    return MotionSequence(axis_angle_to_sixd(np.asarray(poses)))


class MotionVae:
    """Sequence VAE: transformer encoder to a single latent, and a
    transformer decoder driven by positional queries from that latent."""

    def __init__(self, seed: int = 0, length: int = SEQUENCE_LENGTH,
                 d_model: int = 64, heads: int = 4, enc_layers: int = 2,
                 dec_layers: int = 2, latent_dim: int = 256,
                 d_hidden: int | None = None, memory_tokens: int = 4):
        self.seed = int(seed)
        self.length = int(length)
        self.d_model = int(d_model)
        self.heads = int(heads)
        self.latent_dim = int(latent_dim)
        self.n_enc = int(enc_layers)
        self.n_dec = int(dec_layers)
        self.d_hidden = int(d_hidden or 2 * d_model)
        # A single memory token would add the same vector to every frame;
        # several tokens let positions attend to different parts of the
        # latent, which frame-level objectives need.
        self.memory_tokens = int(memory_tokens)
        rng = np.random.default_rng(seed)

        self.in_proj = Linear(FRAME_DIMS, d_model, rng)
        self.encoder = [EncoderLayer(d_model, heads, self.d_hidden, rng)
                        for _ in range(self.n_enc)]
        self.out_proj = Linear(d_model, d_model, rng)
        self.head_mu = Linear(d_model, latent_dim, rng)
        self.head_logvar = Linear(d_model, latent_dim, rng)
        self.latent_proj = Linear(latent_dim, self.memory_tokens * d_model, rng)
        self.decoder = [DecoderLayer(d_model, heads, self.d_hidden, rng)
                        for _ in range(self.n_dec)]
        self.dec_out = Linear(d_model, FRAME_DIMS, rng)
        # Decoder queries: the positional embedding of an all-zero sequence.
        self.positions = sinusoidal_embedding(self.length, d_model)

    def parameters(self) -> list:
        mods = ([self.in_proj] + self.encoder
                + [self.out_proj, self.head_mu, self.head_logvar,
                   self.latent_proj] + self.decoder + [self.dec_out])
        out = []
        for m in mods:
            out.extend(m.parameters())
        return out

    # -------------------------------------------------------------- passes
    def _check_input(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 3 and batch.shape[1:] == (24, 6):
            batch = batch.reshape(1, self.length, FRAME_DIMS) \
                if batch.shape[0] == self.length else batch
        if batch.ndim == 3 and batch.shape[1] == self.length \
                and batch.shape[2] == FRAME_DIMS:
            return batch
        if batch.ndim == 4 and batch.shape[1:] == (self.length, 24, 6):
            return batch.reshape(batch.shape[0], self.length, FRAME_DIMS)
        raise DimensionError(
            f"expected (B, {self.length}, 24, 6) sequences, got {batch.shape}")

    def encode(self, batch) -> tuple:
        """Recorded (mu, sigma) tensors, each (B, latent)."""
        x = batch if isinstance(batch, Tensor) else Tensor(self._check_input(batch))
        h = self.in_proj(x)
        h = add(h, Tensor(self.positions[None, :, :]))
        for layer in self.encoder:
            h = layer(h)
        pooled = tmean(self.out_proj(h), axis=1)
        mu = self.head_mu(pooled)
        sigma = exp(mul(Tensor(0.5), self.head_logvar(pooled)))
        return mu, sigma

    def reparameterize(self, mu: Tensor, sigma: Tensor,
                       rng: np.random.Generator) -> Tensor:
        eps = rng.standard_normal(mu.shape)
        return add(mu, mul(sigma, Tensor(eps)))

    def decode(self, z) -> Tensor:
        """Recorded decode: latent (B, latent) -> (B, L, 144)."""
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
        if z.ndim == 1:
            z = reshape(z, (1, z.shape[0]))
        b = z.shape[0]
        memory = reshape(self.latent_proj(z),
                         (b, self.memory_tokens, self.d_model))
        queries = broadcast_to(Tensor(self.positions[None, :, :]),
                               (b, self.length, self.d_model))
        h = queries
        for layer in self.decoder:
            h = layer(h, memory)
        return self.dec_out(h)

    def decode_sequence(self, z: np.ndarray) -> MotionSequence:
        """Deterministic single-sequence decode to a motion sequence."""
        out = self.decode(np.asarray(z, dtype=np.float64).reshape(1, -1))
        return MotionSequence(out.data.reshape(self.length, 24, 6))

    # ---------------------------------------------------------- persistence
    def spec(self) -> dict:
        return {
            "kind": "motion-vae", "seed": self.seed, "length": self.length,
            "d_model": self.d_model, "heads": self.heads,
            "enc_layers": self.n_enc, "dec_layers": self.n_dec,
            "latent_dim": self.latent_dim, "d_hidden": self.d_hidden,
            "memory_tokens": self.memory_tokens,
        }

    def save(self, path) -> None:
        arrays = {f"p.{i}": p.data for i, p in enumerate(self.parameters())}
        container.save_container(path, container.FIELD_MAGIC, self.spec(),
                                 arrays)

    @classmethod
    def load(cls, path) -> "MotionVae":
        header, arrays = container.load_container(path, container.FIELD_MAGIC)
        if header.get("kind") != "motion-vae":
            raise FormatError(f"{path}: not a motion VAE checkpoint")
        vae = cls(seed=header["seed"], length=header["length"],
                  d_model=header["d_model"], heads=header["heads"],
                  enc_layers=header["enc_layers"],
                  dec_layers=header["dec_layers"],
                  latent_dim=header["latent_dim"],
                  d_hidden=header["d_hidden"],
                  memory_tokens=header.get("memory_tokens", 4))
        params = vae.parameters()
        for i, p in enumerate(params):
            data = arrays[f"p.{i}"]
            if data.shape != p.shape:
                raise FormatError(f"{path}: parameter {i} shape mismatch")
            p.data = data.copy()
        return vae


def kl_to_unit_gaussian(mu: Tensor, sigma: Tensor) -> Tensor:
    """0.5 sum(mu^2 + sigma^2 - 1 - 2 log sigma), averaged over the batch."""
    s2 = mul(sigma, sigma)
    term = sub(sub(add(mul(mu, mu), s2), Tensor(1.0)),
               mul(Tensor(2.0), log(sigma)))
    return tmean(tsum(mul(Tensor(0.5), term), axis=1))


@dataclass
class MotionTrainResult:
    history: list
    heldout_mse: float


def train_motion_vae(vae: MotionVae, corpus: np.ndarray, epochs: int = 100,
                     kl_weight: float = 1e-4, seed: int = 0,
                     lr: float = 5e-4, batch_size: int = 16,
                     heldout_frac: float = 0.1,
                     checkpoint_path=None) -> MotionTrainResult:
    """Adam training on reconstruction MSE plus the weighted KL term."""
    data = vae._check_input(corpus)
    rng = np.random.default_rng(seed)
    n = data.shape[0]
    n_held = max(int(n * heldout_frac), 1)
    perm = rng.permutation(n)
    held, train = data[perm[:n_held]], data[perm[n_held:]]

    params = vae.parameters()
    state = AdamState(params, lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(train.shape[0])
        total, batches = 0.0, 0
        for start in range(0, train.shape[0], batch_size):
            batch = train[order[start:start + batch_size]]
            mu, sigma = vae.encode(batch)
            z = vae.reparameterize(mu, sigma, rng)
            recon = vae.decode(z)
            err = sub(recon, Tensor(batch))
            loss = tmean(mul(err, err)) + kl_weight * kl_to_unit_gaussian(mu, sigma)
            val = float(loss.data)
            if not np.isfinite(val):
                if checkpoint_path is not None:
                    vae.save(checkpoint_path)
                raise NumericalAbortError(
                    f"non-finite motion VAE loss at epoch {epoch}",
                    checkpoint_path=checkpoint_path)
            grads = grad_arrays(loss, params)
            adam_step(state, params, grads)
            total += val
            batches += 1
        history.append({"epoch": epoch, "loss": total / max(batches, 1)})
        if checkpoint_path is not None and (epoch + 1) % 20 == 0:
            vae.save(checkpoint_path)

    mu, _ = vae.encode(held)
    recon = vae.decode(mu)
    heldout_mse = float(np.mean((recon.data - held) ** 2))
    if checkpoint_path is not None:
        vae.save(checkpoint_path)
    return MotionTrainResult(history, heldout_mse)


def synthetic_motion_corpus(count: int, seed: int = 0,
                            length: int = SEQUENCE_LENGTH) -> np.ndarray:
    """Band-limited random joint sinusoids converted to 6-D sequences."""
    from ..posegen import _JOINT_LIMITS
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 2.0 * np.pi, length)
    out = np.empty((count, length, 24, 6))
    for i in range(count):
        amp = rng.uniform(0.1, 0.8, size=(2, 23, 3)) * _JOINT_LIMITS[None, :, None] * 0.5
        freq = rng.integers(1, 4, size=(2, 23, 3)).astype(np.float64)
        phase = rng.uniform(0, 2 * np.pi, size=(2, 23, 3))
        aa = np.zeros((length, 24, 3))
        for h in range(2):
            aa[:, 1:, :] += amp[h] * np.sin(freq[h] * t[:, None, None] + phase[h])
        mags = np.linalg.norm(aa[:, 1:], axis=2, keepdims=True)
        cap = _JOINT_LIMITS[None, :, None]
        scale = np.where(mags > cap, cap / np.maximum(mags, 1e-12), 1.0)
        aa[:, 1:] *= scale
        out[i] = axis_angle_to_sixd(aa)
    return out.reshape(count, length, FRAME_DIMS)


def identity_sequence(length: int = SEQUENCE_LENGTH) -> MotionSequence:
    return MotionSequence(sixd_identity((length, 24)))
