"""Colored triangle meshes plus OBJ / binary PLY round trips."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError


@dataclass
class ColoredMesh:
    vertices: np.ndarray          # (N, 3)
    faces: np.ndarray             # (F, 3) int
    colors: np.ndarray            # (N, 3) in [0, 1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.colors = np.clip(np.asarray(self.colors, dtype=np.float64), 0.0, 1.0)
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise FormatError("faces index vertices outside the mesh")
        if self.colors.shape != self.vertices.shape:
            raise FormatError(
                f"colors shape {self.colors.shape} != vertices {self.vertices.shape}")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


def _atomic_write(path, write_fn, mode="wb"):
    path = os.fspath(path)
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_obj(mesh: ColoredMesh, path) -> None:
    """OBJ with the common per-vertex color extension: v x y z r g b."""
    def write(fh):
        for v, c in zip(mesh.vertices, mesh.colors):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g} "
                     f"{c[0]:.9g} {c[1]:.9g} {c[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    try:
        _atomic_write(path, write, mode="w")
    except OSError as exc:
        raise FormatError(f"cannot write OBJ {path}: {exc}") from exc


def import_obj(path) -> ColoredMesh:
    verts, colors, faces = [], [], []
    try:
        with open(path, "r") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    nums = [float(x) for x in parts[1:]]
                    verts.append(nums[:3])
                    colors.append(nums[3:6] if len(nums) >= 6 else [1.0, 1.0, 1.0])
                elif parts[0] == "f":
                    idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
                    faces.append(idx)
    except OSError as exc:
        raise FormatError(f"cannot read OBJ {path}: {exc}") from exc
    if not verts:
        raise FormatError(f"{path}: no vertices found")
    return ColoredMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3),
                       np.array(colors))


def export_ply(mesh: ColoredMesh, path) -> None:
    """Binary little-endian PLY with float32 positions and uchar colors."""
    n, f = mesh.n_vertices, mesh.faces.shape[0]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {f}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    pos = mesh.vertices.astype("<f4")
    col = np.round(mesh.colors * 255.0).astype(np.uint8)

    def write(fh):
        fh.write(header.encode("ascii"))
        for i in range(n):
            fh.write(pos[i].tobytes())
            fh.write(col[i].tobytes())
        for face in mesh.faces:
            fh.write(struct.pack("<B3i", 3, int(face[0]), int(face[1]),
                                 int(face[2])))
    try:
        _atomic_write(path, write)
    except OSError as exc:
        raise FormatError(f"cannot write PLY {path}: {exc}") from exc


def import_ply(path) -> ColoredMesh:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read PLY {path}: {exc}") from exc
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = blob[:end].decode("ascii").splitlines()
    n_vert = n_face = 0
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
    at = end + len(b"end_header\n")
    stride = 12 + 3
    body = blob[at: at + n_vert * stride]
    if len(body) != n_vert * stride:
        raise FormatError(f"{path}: truncated vertex block")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(n_vert, stride)
    pos = raw[:, :12].copy().view("<f4").astype(np.float64)
    col = raw[:, 12:].astype(np.float64) / 255.0
    at += n_vert * stride
    faces = np.empty((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        count = blob[at]
        if count != 3:
            raise FormatError(f"{path}: face {i} is not a triangle")
        faces[i] = struct.unpack_from("<3i", blob, at + 1)
        at += 1 + 12
    return ColoredMesh(pos, faces, col)


def uv_sphere(radius: float = 0.5, center=(0.0, 0.0, 0.0),
              n_lat: int = 24, n_lon: int = 32,
              color=(1.0, 1.0, 1.0)) -> ColoredMesh:
    """Latitude-longitude sphere, used widely by tests and walkthroughs."""
    center = np.asarray(center, dtype=np.float64)
    verts = [center + np.array([0.0, radius, 0.0])]
    for i in range(1, n_lat):
        phi = np.pi * i / n_lat
        for j in range(n_lon):
            lam = 2.0 * np.pi * j / n_lon
            verts.append(center + radius * np.array([
                np.sin(phi) * np.cos(lam), np.cos(phi), np.sin(phi) * np.sin(lam)]))
    verts.append(center + np.array([0.0, -radius, 0.0]))
    verts = np.asarray(verts)

    faces = []
    for j in range(n_lon):
        faces.append([0, 1 + (j + 1) % n_lon, 1 + j])
    for i in range(n_lat - 2):
        ring0 = 1 + i * n_lon
        ring1 = ring0 + n_lon
        for j in range(n_lon):
            j2 = (j + 1) % n_lon
            faces.append([ring0 + j, ring0 + j2, ring1 + j2])
            faces.append([ring0 + j, ring1 + j2, ring1 + j])
    last = len(verts) - 1
    ring = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        faces.append([last, ring + j, ring + (j + 1) % n_lon])
    colors = np.tile(np.asarray(color, dtype=np.float64), (len(verts), 1))
    return ColoredMesh(verts, np.asarray(faces, dtype=np.int64), colors)
