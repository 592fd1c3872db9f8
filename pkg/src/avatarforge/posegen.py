"""Candidate pose generation: pose VAE, pose codebook, top-k scored query."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import body as bodymod
from .diffmath import Mlp, container
from .errors import FormatError, ParameterError
from .meshops import Camera, ColoredMesh, render_mesh_fast
from .shapegen import frontal_camera, kmeans, train_vae

POSE_LATENT_DIM = 32
NON_ROOT_DIMS = 69          # 23 joints x 3 axis-angle components

# Per-joint rotation magnitude limits (radians), joints 1..23.
_JOINT_LIMITS = np.array([
    1.0, 1.0, 0.4,          # hips, spine1
    1.2, 1.2, 0.4,          # knees, spine2
    0.6, 0.6, 0.4,          # ankles, spine3
    0.4, 0.4, 0.5,          # feet, neck
    0.4, 0.4, 0.5,          # collars, head
    1.3, 1.3,               # shoulders
    1.3, 1.3,               # elbows
    0.6, 0.6,               # wrists
    0.4, 0.4,               # hands
])


class PoseVae:
    """Encoder/decoder over the 23 non-root joints' axis angles."""

    def __init__(self, seed: int = 0, hidden: int = 64):
        self.seed = int(seed)
        self.hidden = int(hidden)
        self.encoder = Mlp([NON_ROOT_DIMS, hidden, 2 * POSE_LATENT_DIM],
                           hidden_activation="relu", seed=seed)
        self.decoder = Mlp([POSE_LATENT_DIM, hidden, NON_ROOT_DIMS],
                           hidden_activation="relu", seed=seed + 1)

    def encode_mean(self, poses: np.ndarray) -> np.ndarray:
        flat = np.asarray(poses, dtype=np.float64).reshape(-1, NON_ROOT_DIMS)
        return self.encoder.forward_raw(flat)[:, :POSE_LATENT_DIM]

    def decode(self, latents: np.ndarray) -> np.ndarray:
        """Decoded non-root axis angles, clamped below pi per joint."""
        flat = self.decoder.forward_raw(
            np.asarray(latents, dtype=np.float64))
        joints = flat.reshape(-1, 23, 3)
        mags = np.linalg.norm(joints, axis=2, keepdims=True)
        limit = np.pi - 1e-3
        scale = np.where(mags > limit, limit / np.maximum(mags, 1e-12), 1.0)
        return (joints * scale).reshape(-1, NON_ROOT_DIMS)


def to_full_pose(non_root: np.ndarray) -> np.ndarray:
    """(n, 69) non-root angles -> (n, 24, 3) poses with the root at zero."""
    non_root = np.asarray(non_root, dtype=np.float64).reshape(-1, 23, 3)
    out = np.zeros((non_root.shape[0], 24, 3))
    out[:, 1:] = non_root
    return out


def synthetic_pose_corpus(count: int, seed: int = 0,
                          trajectories: int = 8) -> np.ndarray:
    """Poses sampled from smooth random joint sinusoids, within limits."""
    rng = np.random.default_rng(seed)
    limits = np.repeat(_JOINT_LIMITS, 3)
    per = max(count // trajectories, 1)
    rows = []
    for _ in range(trajectories):
        amp = rng.uniform(0.2, 1.0, size=(2, NON_ROOT_DIMS)) * limits * 0.5
        freq = rng.uniform(0.5, 3.0, size=(2, NON_ROOT_DIMS))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(2, NON_ROOT_DIMS))
        t = rng.uniform(0.0, 2.0 * np.pi, size=per)[:, None]
        pose = sum(amp[h] * np.sin(freq[h] * t + phase[h]) for h in range(2))
        rows.append(pose)
    out = np.concatenate(rows, axis=0)[:count]
    joints = out.reshape(-1, 23, 3)
    mags = np.linalg.norm(joints, axis=2, keepdims=True)
    cap = _JOINT_LIMITS[None, :, None]
    scale = np.where(mags > cap, cap / np.maximum(mags, 1e-12), 1.0)
    return (joints * scale).reshape(-1, NON_ROOT_DIMS)


def load_pose_corpus(path) -> np.ndarray:
    """JSON-lines pose corpus: one 69-float array per line."""
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON ({exc})") from exc
            if len(row) != NON_ROOT_DIMS:
                raise FormatError(
                    f"{path}:{lineno}: expected {NON_ROOT_DIMS} floats, "
                    f"got {len(row)}")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: empty pose corpus")
    return np.asarray(rows, dtype=np.float64)


def save_pose_corpus(path, poses: np.ndarray) -> None:
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, NON_ROOT_DIMS)
    with open(path, "w") as fh:
        for row in poses:
            fh.write(json.dumps([float(x) for x in row]) + "\n")


def train_pose_vae(corpus: np.ndarray, epochs: int = 60, seed: int = 0,
                   hidden: int = 64, **kwargs):
    """Returns (vae, train result); corpus must hold >= 5000 poses."""
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.shape[0] < 5000:
        raise ParameterError(
            f"pose corpus needs >= 5000 samples, got {corpus.shape[0]}")
    vae = PoseVae(seed=seed, hidden=hidden)
    result = train_vae(vae.encoder, vae.decoder, corpus, epochs, seed, **kwargs)
    return vae, result


def heldout_joint_error(vae: PoseVae, poses: np.ndarray) -> float:
    """Mean per-joint angular reconstruction error in radians."""
    recon = vae.decode(vae.encode_mean(poses))
    diff = (recon - poses).reshape(-1, 23, 3)
    return float(np.mean(np.linalg.norm(diff, axis=2)))


# --------------------------------------------------------------- codebook

@dataclass
class PoseCodebook:
    latents: np.ndarray         # (K, 32)
    poses: np.ndarray           # (K, 24, 3), root fixed at zero
    seed: int

    @property
    def size(self) -> int:
        return self.latents.shape[0]

    def save(self, path) -> None:
        header = {"k": self.size, "latent_dim": POSE_LATENT_DIM,
                  "seed": self.seed}
        container.save_container(path, container.POSE_CODEBOOK_MAGIC, header, {
            "latents": self.latents,
            "poses": self.poses.reshape(self.size, -1),
        })

    @classmethod
    def load(cls, path) -> "PoseCodebook":
        header, arrays = container.load_container(
            path, container.POSE_CODEBOOK_MAGIC)
        k = int(header["k"])
        return cls(arrays["latents"], arrays["poses"].reshape(k, 24, 3),
                   int(header.get("seed", 0)))


def build_pose_codebook(vae: PoseVae, corpus: np.ndarray, k: int = 4096,
                        seed: int = 0) -> PoseCodebook:
    """K-Means over encoded corpus latents, centroids decoded to poses."""
    latents = vae.encode_mean(corpus)
    result = kmeans(latents, k, seed=seed)
    decoded = to_full_pose(vae.decode(result.centroids))
    return PoseCodebook(result.centroids, decoded, seed)


# ------------------------------------------------------------- candidates

@dataclass
class CandidateSet:
    poses: np.ndarray           # (k, 24, 3) ordered by descending score
    scores: np.ndarray          # (k,)
    indices: np.ndarray         # (k,) codebook rows

    def __post_init__(self):
        order = np.lexsort((self.indices, -self.scores))
        if not np.array_equal(order, np.arange(len(self.scores))):
            raise ParameterError("candidate set must be ordered by score")

    @property
    def k(self) -> int:
        return self.poses.shape[0]


def render_pose(body: bodymod.TemplateBody, pose: np.ndarray,
                camera: Camera | None = None) -> np.ndarray:
    """Render the neutral-shape body in a pose from the fixed camera."""
    camera = camera or frontal_camera()
    verts = bodymod.lbs(body, body.vertices, np.asarray(pose, dtype=np.float64))
    mesh = ColoredMesh(verts, body.faces, bodymod.default_vertex_colors(body))
    return render_mesh_fast(mesh, camera, ambient=0.35).rgb


def generate_candidates(codebook: PoseCodebook, t_motion: str,
                        body: bodymod.TemplateBody, oracle, k: int = 5,
                        camera: Camera | None = None,
                        maximize_raw_score: bool = False) -> CandidateSet:
    """Top-k codebook poses by image-text similarity of their renders.

    Every entry is rendered on the neutral-shape body from the fixed
    frontal camera and scored by cosine against the motion prompt; the
    top entries come back in descending order with index tie-breaks.
    ``maximize_raw_score`` flips the ranking for score-sign experiments.
    """
    if k > codebook.size:
        raise ParameterError(
            f"asked for top {k} of a {codebook.size}-entry codebook")
    camera = camera or frontal_camera()
    text_embed = oracle.embed_text(t_motion)
    similarity = np.empty(codebook.size)
    for i in range(codebook.size):
        render = render_pose(body, codebook.poses[i], camera)
        similarity[i] = float(oracle.embed_image(render) @ text_embed)
    # Flipped mode ranks by the raw written score 1 - cos instead.
    scores = (1.0 - similarity) if maximize_raw_score else similarity
    order = np.lexsort((np.arange(codebook.size), -scores))[:k]
    return CandidateSet(codebook.poses[order].copy(), scores[order].copy(),
                        order.astype(np.int64))
