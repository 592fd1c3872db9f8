"""Deterministic Lambertian mesh renderers.

``render_mesh`` traces every pixel against every triangle with the
Moller-Trumbore test; because the camera is a pinhole, the per-triangle
terms that involve the origin are hoisted out of the pixel loop and each
pixel chunk reduces to three (chunk x 3) @ (3 x F) products.

``render_mesh_fast`` is a z-buffer rasterizer with the same camera model
and shading; it exists for dense marching-cubes meshes (animation frames,
codebook scoring) where tracing T triangles per pixel is wasteful.  Both
renderers are bit-deterministic for identical inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .camera import Camera, Image
from .meshio import ColoredMesh

_EPS = 1e-12


def _shade(normals, light, ambient):
    dif = np.maximum(np.einsum("nd,d->n", normals, light), 0.0)
    return np.clip(ambient + (1.0 - ambient) * dif, 0.0, 1.0)


def render_mesh(mesh: ColoredMesh, camera: Camera, light=None,
                ambient: float = 0.1, chunk: int = 1024) -> Image:
    """Nearest-hit ray trace with flat shading and vertex-color interpolation.

    ``light`` is the unit direction from the scene toward the light source;
    it defaults to the direction back toward the camera.  Pixels that miss
    the mesh are black with mask 0.
    """
    h, w = camera.height, camera.width
    if light is None:
        light = -camera.forward()
    light = np.asarray(light, dtype=np.float64)
    if abs(np.linalg.norm(light) - 1.0) > 1e-6:
        raise ParameterError("light direction must be unit length")
    if not (0.0 <= ambient <= 1.0):
        raise ParameterError(f"ambient must lie in [0, 1], got {ambient}")

    rgb = np.zeros((h * w, 3))
    mask = np.zeros(h * w)
    if mesh.faces.shape[0] == 0:
        return Image(rgb.reshape(h, w, 3), mask.reshape(h, w))

    v0 = mesh.vertices[mesh.faces[:, 0]]
    v1 = mesh.vertices[mesh.faces[:, 1]]
    v2 = mesh.vertices[mesh.faces[:, 2]]
    e1 = v1 - v0
    e2 = v2 - v0
    s = camera.position[None, :] - v0                     # (F, 3)
    q = np.cross(s, e1)                                   # (F, 3)
    n_vec = np.cross(e1, e2)                              # unnormalized normals
    t_num = np.einsum("fd,fd->f", e2, q)                  # t * det per triangle
    m_u = np.cross(e2, s)                                 # u * det = dir . m_u
    face_colors = (mesh.colors[mesh.faces[:, 0]],
                   mesh.colors[mesh.faces[:, 1]],
                   mesh.colors[mesh.faces[:, 2]])
    norm_len = np.linalg.norm(n_vec, axis=1)
    n_unit = n_vec / np.where(norm_len < _EPS, 1.0, norm_len)[:, None]

    dirs = camera.all_pixel_directions()
    for start in range(0, h * w, chunk):
        d = dirs[start:start + chunk]                     # (c, 3)
        det = -(d @ n_vec.T)                              # dir . (e2 x e1)
        u_num = d @ m_u.T
        v_num = d @ q.T
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = u_num * inv
            v = v_num * inv
            t = t_num[None, :] * inv
        ok = (np.abs(det) > _EPS) & (u >= 0.0) & (v >= 0.0) \
            & (u + v <= 1.0) & (t > 1e-6)
        t_masked = np.where(ok, t, np.inf)
        best = np.argmin(t_masked, axis=1)
        rows = np.arange(d.shape[0])
        hit = np.isfinite(t_masked[rows, best])
        if not np.any(hit):
            continue
        fidx = best[hit]
        uu = u[rows[hit], fidx][:, None]
        vv = v[rows[hit], fidx][:, None]
        color = ((1.0 - uu - vv) * face_colors[0][fidx]
                 + uu * face_colors[1][fidx] + vv * face_colors[2][fidx])
        normals = n_unit[fidx]
        facing = np.einsum("nd,nd->n", normals, d[hit]) > 0.0
        normals = np.where(facing[:, None], -normals, normals)
        shade = _shade(normals, light, ambient)
        out_idx = start + rows[hit]
        rgb[out_idx] = np.clip(shade[:, None] * color, 0.0, 1.0)
        mask[out_idx] = 1.0
    return Image(rgb.reshape(h, w, 3), mask.reshape(h, w))


def _raster_prepare(mesh: ColoredMesh, camera: Camera):
    row, col, depth = camera.project(mesh.vertices)
    tri = mesh.faces
    front = np.all(depth[tri] > 1e-6, axis=1)
    return row, col, depth, tri[front]


def render_mesh_fast(mesh: ColoredMesh, camera: Camera, light=None,
                     ambient: float = 0.1) -> Image:
    """Z-buffer rasterization twin of :func:`render_mesh`."""
    h, w = camera.height, camera.width
    if light is None:
        light = -camera.forward()
    light = np.asarray(light, dtype=np.float64)
    if abs(np.linalg.norm(light) - 1.0) > 1e-6:
        raise ParameterError("light direction must be unit length")

    rgb = np.zeros((h, w, 3))
    zbuf = np.full((h, w), np.inf)
    mask = np.zeros((h, w))
    if mesh.faces.shape[0] == 0:
        return Image(rgb, mask)

    row, col, depth, tri = _raster_prepare(mesh, camera)
    v0 = mesh.vertices[tri[:, 0]]
    e1 = mesh.vertices[tri[:, 1]] - v0
    e2 = mesh.vertices[tri[:, 2]] - v0
    n_vec = np.cross(e1, e2)
    lens = np.linalg.norm(n_vec, axis=1)
    n_unit = n_vec / np.where(lens < _EPS, 1.0, lens)[:, None]
    view = camera.forward()
    flip = np.einsum("fd,d->f", n_unit, view) > 0.0
    n_unit[flip] = -n_unit[flip]
    shades = _shade(n_unit, light, ambient)

    for f in range(tri.shape[0]):
        ia, ib, ic = tri[f]
        rs = np.array([row[ia], row[ib], row[ic]])
        cs = np.array([col[ia], col[ib], col[ic]])
        r0 = max(int(np.floor(rs.min())), 0)
        r1 = min(int(np.ceil(rs.max())), h - 1)
        c0 = max(int(np.floor(cs.min())), 0)
        c1 = min(int(np.ceil(cs.max())), w - 1)
        if r0 > r1 or c0 > c1:
            continue
        denom = ((cs[1] - cs[0]) * (rs[2] - rs[0])
                 - (cs[2] - cs[0]) * (rs[1] - rs[0]))
        if abs(denom) < 1e-12:
            continue
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1),
                             indexing="ij")
        lb = ((cc - cs[0]) * (rs[2] - rs[0]) - (cs[2] - cs[0]) * (rr - rs[0])) / denom
        lc = ((cs[1] - cs[0]) * (rr - rs[0]) - (cc - cs[0]) * (rs[1] - rs[0])) / denom
        la = 1.0 - lb - lc
        inside = (la >= 0) & (lb >= 0) & (lc >= 0)
        if not np.any(inside):
            continue
        z = la * depth[ia] + lb * depth[ib] + lc * depth[ic]
        win = zbuf[r0:r1 + 1, c0:c1 + 1]
        closer = inside & (z < win)
        if not np.any(closer):
            continue
        color = (la[..., None] * mesh.colors[ia]
                 + lb[..., None] * mesh.colors[ib]
                 + lc[..., None] * mesh.colors[ic])
        win[closer] = z[closer]
        block = rgb[r0:r1 + 1, c0:c1 + 1]
        block[closer] = np.clip(shades[f] * color[closer], 0.0, 1.0)
        mask[r0:r1 + 1, c0:c1 + 1][closer] = 1.0
    return Image(rgb, mask)


def silhouette(mesh: ColoredMesh, camera: Camera) -> np.ndarray:
    """Boolean coverage mask of the mesh from this camera (rasterized)."""
    h, w = camera.height, camera.width
    mask = np.zeros((h, w), dtype=bool)
    if mesh.faces.shape[0] == 0:
        return mask
    row, col, depth, tri = _raster_prepare(mesh, camera)
    for f in range(tri.shape[0]):
        ia, ib, ic = tri[f]
        rs = np.array([row[ia], row[ib], row[ic]])
        cs = np.array([col[ia], col[ib], col[ic]])
        r0 = max(int(np.floor(rs.min())), 0)
        r1 = min(int(np.ceil(rs.max())), h - 1)
        c0 = max(int(np.floor(cs.min())), 0)
        c1 = min(int(np.ceil(cs.max())), w - 1)
        if r0 > r1 or c0 > c1:
            continue
        denom = ((cs[1] - cs[0]) * (rs[2] - rs[0])
                 - (cs[2] - cs[0]) * (rs[1] - rs[0]))
        if abs(denom) < 1e-12:
            continue
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1),
                             indexing="ij")
        lb = ((cc - cs[0]) * (rs[2] - rs[0]) - (cs[2] - cs[0]) * (rr - rs[0])) / denom
        lc = ((cs[1] - cs[0]) * (rr - rs[0]) - (cc - cs[0]) * (rs[1] - rs[0])) / denom
        inside = (lb >= 0) & (lc >= 0) & (1.0 - lb - lc >= 0)
        mask[r0:r1 + 1, c0:c1 + 1] |= inside
    return mask
