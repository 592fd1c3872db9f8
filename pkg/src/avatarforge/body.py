"""Articulated template body: blend shapes, kinematics, and skinning.

The joint tree is the standard 24-joint layout used by common parametric
human models, so compatible assets drop in through :func:`load_body`.  A
license-free capsule-limb humanoid is generated procedurally for tests
and offline runs.  Up axis is +Y, the body faces +Z, and the left side of
the body sits at +X.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffmath import container
from .errors import DimensionError, FormatError, ParameterError, SingularBlendError
from .rotations import axis_angle_to_matrix

JOINT_COUNT = 24
SHAPE_DIM = 10

PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                    9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1",
    "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3",
    "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hand", "right_hand",
]

HEAD_JOINT = 15

_REST_JOINTS = np.array([
    [0.00, 0.00, 0.00],    # pelvis
    [0.09, -0.06, 0.00],   # left_hip
    [-0.09, -0.06, 0.00],  # right_hip
    [0.00, 0.12, 0.00],    # spine1
    [0.10, -0.45, 0.00],   # left_knee
    [-0.10, -0.45, 0.00],  # right_knee
    [0.00, 0.25, 0.00],    # spine2
    [0.11, -0.80, 0.00],   # left_ankle
    [-0.11, -0.80, 0.00],  # right_ankle
    [0.00, 0.38, 0.00],    # spine3
    [0.11, -0.86, 0.12],   # left_foot
    [-0.11, -0.86, 0.12],  # right_foot
    [0.00, 0.55, 0.00],    # neck
    [0.07, 0.47, 0.00],    # left_collar
    [-0.07, 0.47, 0.00],   # right_collar
    [0.00, 0.64, 0.00],    # head
    [0.20, 0.50, 0.00],    # left_shoulder
    [-0.20, 0.50, 0.00],   # right_shoulder
    [0.46, 0.50, 0.00],    # left_elbow
    [-0.46, 0.50, 0.00],   # right_elbow
    [0.70, 0.50, 0.00],    # left_wrist
    [-0.70, 0.50, 0.00],   # right_wrist
    [0.79, 0.50, 0.00],    # left_hand
    [-0.79, 0.50, 0.00],   # right_hand
])

_JOINT_RADII = np.array([
    0.115, 0.085, 0.085, 0.115, 0.058, 0.058, 0.120, 0.045, 0.045, 0.125,
    0.038, 0.038, 0.050, 0.060, 0.060, 0.105, 0.060, 0.060, 0.046, 0.046,
    0.036, 0.036, 0.030, 0.030,
])


@dataclass
class TemplateBody:
    """Rest-pose mesh plus everything needed to pose it."""

    vertices: np.ndarray          # (N, 3) rest positions, meters
    faces: np.ndarray             # (F, 3) int vertex indices
    joints: np.ndarray            # (24, 3) rest joint positions
    parents: np.ndarray           # (24,) parent joint index, -1 at the root
    weights: np.ndarray           # (N, 24) convex blend weights
    shapes: np.ndarray            # (N, 3, 10) shape blend shapes
    joint_names: list = field(default_factory=lambda: list(JOINT_NAMES))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def validate(self) -> None:
        n = self.n_vertices
        if self.joints.shape != (JOINT_COUNT, 3):
            raise FormatError(f"expected {JOINT_COUNT} joints, got {self.joints.shape}")
        if self.parents.shape != (JOINT_COUNT,) or self.parents[0] != -1:
            raise FormatError("parent array must have 24 entries rooted at joint 0")
        for j in range(1, JOINT_COUNT):
            p, hops = j, 0
            while p != 0:
                p = int(self.parents[p])
                hops += 1
                if p < 0 or hops > JOINT_COUNT:
                    raise FormatError(f"joint {j} is not connected to the root")
        if self.weights.shape != (n, JOINT_COUNT):
            raise FormatError(f"blend weights shape {self.weights.shape} != ({n}, 24)")
        if np.any(self.weights < -1e-12):
            row = int(np.argwhere(self.weights < -1e-12)[0][0])
            raise FormatError(f"blend-weight row {row} has a negative entry")
        sums = self.weights.sum(axis=1)
        bad = np.abs(sums - 1.0) > 1e-6
        if np.any(bad):
            row = int(np.argmax(bad))
            raise FormatError(
                f"blend-weight row {row} sums to {sums[row]:.6f}, expected 1")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise FormatError("faces index vertices outside the mesh")
        if self.shapes.shape != (n, 3, SHAPE_DIM):
            raise FormatError(f"shape blend shapes {self.shapes.shape} != ({n}, 3, 10)")


# -------------------------------------------------------------- procedural

def _bone_list():
    return [(int(PARENTS[j]), j) for j in range(1, JOINT_COUNT)]


def _orthonormal_frame(axis: np.ndarray):
    a = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    w = np.cross(a, u)
    return a, u, w


def _capsule(p0, p1, r0, r1, segments, tube_rings, cap_rings):
    """Tapered capsule mesh between two joints."""
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length < 1e-9:
        axis = np.array([0.0, 1e-6, 0.0])
        length = 1e-6
    a, u, w = _orthonormal_frame(axis)
    phis = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    circle = np.outer(np.cos(phis), u) + np.outer(np.sin(phis), w)

    verts = []
    rings = []
    # Bottom cap (around p0, pointing away from the bone).
    bottom_apex = len(verts)
    verts.append(p0 - a * r0)
    for c in range(cap_rings - 1, 0, -1):
        psi = (np.pi / 2.0) * (c / cap_rings)
        ring = p0 - a * (r0 * np.sin(psi)) + circle * (r0 * np.cos(psi))
        rings.append(range(len(verts), len(verts) + segments))
        verts.extend(ring)
    # Tube rings.
    for i in range(tube_rings):
        t = i / (tube_rings - 1)
        center = p0 + axis * t
        radius = (1.0 - t) * r0 + t * r1
        ring = center + circle * radius
        rings.append(range(len(verts), len(verts) + segments))
        verts.extend(ring)
    # Top cap.
    for c in range(1, cap_rings):
        psi = (np.pi / 2.0) * (c / cap_rings)
        ring = p1 + a * (r1 * np.sin(psi)) + circle * (r1 * np.cos(psi))
        rings.append(range(len(verts), len(verts) + segments))
        verts.extend(ring)
    top_apex = len(verts)
    verts.append(p1 + a * r1)

    faces = []
    for ra, rb in zip(rings[:-1], rings[1:]):
        ra, rb = list(ra), list(rb)
        for s in range(segments):
            s2 = (s + 1) % segments
            faces.append([ra[s], rb[s], rb[s2]])
            faces.append([ra[s], rb[s2], ra[s2]])
    first, last = list(rings[0]), list(rings[-1])
    for s in range(segments):
        s2 = (s + 1) % segments
        faces.append([bottom_apex, first[s2], first[s]])
        faces.append([top_apex, last[s], last[s2]])
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def _segment_distances(points: np.ndarray, p0: np.ndarray, p1: np.ndarray):
    """Distance from each point to each segment; (N, B)."""
    d = p1 - p0                      # (B, 3)
    dd = np.einsum("bi,bi->b", d, d)
    dd = np.where(dd < 1e-18, 1e-18, dd)
    diff = points[:, None, :] - p0[None, :, :]
    t = np.clip(np.einsum("nbi,bi->nb", diff, d) / dd, 0.0, 1.0)
    proj = p0[None, :, :] + t[:, :, None] * d[None, :, :]
    return np.linalg.norm(points[:, None, :] - proj, axis=2), t


def _procedural_shapes(verts: np.ndarray, nearest_bone_dir: np.ndarray) -> np.ndarray:
    """Ten synthetic blend shapes: global scale, limb lengths, girth, etc."""
    n = verts.shape[0]
    x, y, z = verts[:, 0], verts[:, 1], verts[:, 2]
    shapes = np.zeros((n, 3, SHAPE_DIM))

    shapes[:, 1, 0] = 0.10 * y                                   # height
    shapes[:, 0, 1] = 0.08 * x                                   # width
    shapes[:, 2, 1] = 0.08 * z
    torso = np.exp(-((y - 0.25) / 0.18) ** 2)                    # torso girth
    shapes[:, 0, 2] = 0.15 * x * torso
    shapes[:, 2, 2] = 0.15 * z * torso
    shapes[:, 1, 3] = 0.12 * np.minimum(y, 0.0)                  # leg length
    arm = np.sign(x) * np.maximum(np.abs(x) - 0.15, 0.0)         # arm length
    shapes[:, 0, 4] = 0.15 * arm
    head_c = np.array([0.0, 0.70, 0.0])
    rel = verts - head_c
    head_w = np.exp(-(np.linalg.norm(rel, axis=1) / 0.15) ** 2)  # head size
    shapes[:, :, 5] = 0.6 * rel * head_w[:, None]
    belly = np.exp(-((y - 0.10) / 0.12) ** 2) * (z > 0.0)        # belly
    shapes[:, 2, 6] = 0.08 * belly
    shoulder = np.exp(-((y - 0.50) / 0.08) ** 2)                 # shoulders
    shapes[:, 0, 7] = 0.06 * np.sign(x) * shoulder
    hip = np.exp(-((y + 0.05) / 0.08) ** 2)                      # hip width
    shapes[:, 0, 8] = 0.06 * np.sign(x) * hip
    shapes[:, :, 9] = 0.25 * nearest_bone_dir                    # limb girth
    return shapes


def make_procedural_body(level: int = 1) -> TemplateBody:
    """Deterministic capsule-limb humanoid; higher levels refine the mesh."""
    if level < 1:
        raise ParameterError(f"level of detail must be >= 1, got {level}")
    segments = 8 + 2 * (level - 1)
    tube_rings = 4 + 2 * (level - 1)
    cap_rings = 2 + (level - 1)

    bones = _bone_list()
    all_verts, all_faces = [], []
    offset = 0
    for parent, child in bones:
        v, f = _capsule(_REST_JOINTS[parent], _REST_JOINTS[child],
                        _JOINT_RADII[parent] * 0.85, _JOINT_RADII[child],
                        segments, tube_rings, cap_rings)
        all_verts.append(v)
        all_faces.append(f + offset)
        offset += v.shape[0]
    verts = np.concatenate(all_verts, axis=0)
    faces = np.concatenate(all_faces, axis=0)

    p0 = np.array([_REST_JOINTS[p] for p, _ in bones])
    p1 = np.array([_REST_JOINTS[c] for _, c in bones])
    drivers = np.array([p for p, _ in bones])
    dists, t = _segment_distances(verts, p0, p1)

    order = np.argsort(dists, axis=1, kind="stable")
    near1, near2 = order[:, 0], order[:, 1]
    inv1 = 1.0 / (dists[np.arange(len(verts)), near1] + 1e-4)
    inv2 = 1.0 / (dists[np.arange(len(verts)), near2] + 1e-4)
    weights = np.zeros((verts.shape[0], JOINT_COUNT))
    rows = np.arange(len(verts))
    np.add.at(weights, (rows, drivers[near1]), inv1)
    np.add.at(weights, (rows, drivers[near2]), inv2)
    weights /= weights.sum(axis=1, keepdims=True)

    # Radial direction away from the nearest bone axis, for the girth shape.
    seg = p1[near1] - p0[near1]
    proj = p0[near1] + t[rows, near1][:, None] * seg
    radial = verts - proj
    norms = np.linalg.norm(radial, axis=1, keepdims=True)
    radial = np.where(norms > 1e-9, radial / np.maximum(norms, 1e-9), 0.0)
    limbish = (np.abs(verts[:, 0:1]) > 0.18) | (verts[:, 1:2] < -0.12)
    nearest_dir = radial * 0.04 * limbish

    body = TemplateBody(
        vertices=verts,
        faces=faces,
        joints=_REST_JOINTS.copy(),
        parents=PARENTS.copy(),
        weights=weights,
        shapes=_procedural_shapes(verts, nearest_dir),
    )
    body.validate()
    return body


def default_vertex_colors(body: TemplateBody) -> np.ndarray:
    """Simple two-tone coloring so template renders carry some signal."""
    y = body.vertices[:, 1]
    t = np.clip((y + 0.9) / 1.7, 0.0, 1.0)[:, None]
    lower = np.array([0.35, 0.38, 0.55])
    upper = np.array([0.78, 0.62, 0.52])
    return lower * (1.0 - t) + upper * t


# ----------------------------------------------------------------- file io

def save_body(path, body: TemplateBody) -> None:
    header = {
        "n_vertices": body.n_vertices,
        "n_faces": int(body.faces.shape[0]),
        "parents": [int(p) for p in body.parents],
        "joint_names": list(body.joint_names),
    }
    arrays = {
        "vertices": body.vertices,
        "shapes": body.shapes,
        "weights": body.weights,
        "joints": body.joints,
        "faces": body.faces.astype(np.float64),
    }
    container.save_container(path, container.BODY_MAGIC, header, arrays)


def load_body(path) -> TemplateBody:
    header, arrays = container.load_container(path, container.BODY_MAGIC)
    for key in ("vertices", "shapes", "weights", "joints", "faces"):
        if key not in arrays:
            raise FormatError(f"body file missing block {key!r}")
    body = TemplateBody(
        vertices=arrays["vertices"],
        faces=arrays["faces"].astype(np.int64),
        joints=arrays["joints"],
        parents=np.asarray(header["parents"], dtype=np.int64),
        weights=arrays["weights"],
        shapes=arrays["shapes"],
        joint_names=list(header.get("joint_names", JOINT_NAMES)),
    )
    body.validate()
    return body


# --------------------------------------------------------------- posing

def apply_shape(body: TemplateBody, beta: np.ndarray) -> np.ndarray:
    """Rest vertices displaced linearly by the shape coefficients."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (SHAPE_DIM,):
        raise DimensionError(f"beta must have shape (10,), got {beta.shape}")
    if np.any(np.abs(beta) > 5.0):
        raise ParameterError("shape coefficients must lie within [-5, 5]")
    return body.vertices + body.shapes @ beta


def forward_kinematics(body: TemplateBody, theta: np.ndarray) -> np.ndarray:
    """Global 4x4 transform per joint for axis-angle pose (24, 3)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (JOINT_COUNT, 3):
        raise DimensionError(f"pose must have shape (24, 3), got {theta.shape}")
    rots = axis_angle_to_matrix(theta)
    out = np.zeros((JOINT_COUNT, 4, 4))
    for j in range(JOINT_COUNT):
        parent = int(body.parents[j])
        local = np.eye(4)
        local[:3, :3] = rots[j]
        local[:3, 3] = body.joints[j] - (body.joints[parent] if parent >= 0 else 0.0)
        if parent < 0:
            out[j] = local
        else:
            out[j] = out[parent] @ local
    return out


def joint_world_positions(body: TemplateBody, theta: np.ndarray) -> np.ndarray:
    return forward_kinematics(body, theta)[:, :3, 3]


def blend_matrices(body: TemplateBody, theta: np.ndarray) -> np.ndarray:
    """Per-vertex blended rest-relative transform (N, 4, 4)."""
    transforms = forward_kinematics(body, theta)
    rel = transforms.copy()
    # G_j = T_j * translate(-rest_j): subtract the rotated rest position.
    rel[:, :3, 3] -= np.einsum("jab,jb->ja", transforms[:, :3, :3], body.joints)
    return np.einsum("nj,jab->nab", body.weights, rel)


def lbs(body: TemplateBody, vertices: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Pose vertices with linear blend skinning."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape != (body.n_vertices, 3):
        raise DimensionError(
            f"vertices shape {vertices.shape} != ({body.n_vertices}, 3)")
    blended = blend_matrices(body, theta)
    return (np.einsum("nab,nb->na", blended[:, :3, :3], vertices)
            + blended[:, :3, 3])


def inverse_lbs(body: TemplateBody, posed: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Undo :func:`lbs` for the same pose; the zero-pose recovery step."""
    posed = np.asarray(posed, dtype=np.float64)
    if posed.shape != (body.n_vertices, 3):
        raise DimensionError(
            f"vertices shape {posed.shape} != ({body.n_vertices}, 3)")
    blended = blend_matrices(body, theta)
    dets = np.linalg.det(blended[:, :3, :3])
    bad = np.abs(dets) < 1e-12
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise SingularBlendError(idx, float(dets[idx]))
    inv = np.linalg.inv(blended[:, :3, :3])
    return np.einsum("nab,nb->na", inv, posed - blended[:, :3, 3])


def transfer_skinning(new_vertices: np.ndarray, body: TemplateBody,
                      source_vertices: np.ndarray | None = None,
                      chunk: int = 2048) -> np.ndarray:
    """Blend weights for new vertices, copied from the nearest source vertex.

    ``source_vertices`` defaults to the body's rest vertices; pass posed
    vertices when the new mesh lives in a posed space.  Ties resolve to the
    lowest source index (argmin keeps the first minimum).
    """
    new_vertices = np.asarray(new_vertices, dtype=np.float64)
    src = body.vertices if source_vertices is None else np.asarray(source_vertices)
    if src.shape[0] == 0:
        raise ParameterError("source body has no vertices")
    src_sq = np.einsum("md,md->m", src, src)
    out = np.empty((new_vertices.shape[0], JOINT_COUNT))
    for start in range(0, new_vertices.shape[0], chunk):
        block = new_vertices[start:start + chunk]
        d2 = (np.einsum("nd,nd->n", block, block)[:, None]
              + src_sq[None, :] - 2.0 * block @ src.T)
        nearest = np.argmin(d2, axis=1)
        out[start:start + chunk] = body.weights[nearest]
    return out


def theta_stand() -> np.ndarray:
    """Canonical standing pose: arms lowered 45 degrees from horizontal."""
    pose = np.zeros((JOINT_COUNT, 3))
    pose[16] = [0.0, 0.0, -np.pi / 4.0]
    pose[17] = [0.0, 0.0, np.pi / 4.0]
    return pose


@dataclass
class PosedBody:
    """A body posed by LBS, with the pose and joint transforms cached."""

    body: TemplateBody
    theta: np.ndarray
    vertices: np.ndarray
    transforms: np.ndarray

    @classmethod
    def pose(cls, body: TemplateBody, theta: np.ndarray,
             rest_vertices: np.ndarray | None = None) -> "PosedBody":
        rest = body.vertices if rest_vertices is None else rest_vertices
        return cls(
            body=body,
            theta=np.asarray(theta, dtype=np.float64),
            vertices=lbs(body, rest, theta),
            transforms=forward_kinematics(body, theta),
        )
