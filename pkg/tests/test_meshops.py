import numpy as np
import pytest

from avatarforge import meshops as M
from avatarforge.errors import DegeneracyError, EmptySurfaceError, ParameterError


def _camera(pos=(0, 0, 2.0), look=(0, 0, 0), res=(64, 64), fov=np.pi / 3):
    return M.Camera(np.array(pos, float), np.array(look, float),
                    np.array([0.0, 1.0, 0.0]), fov, res)


# ---------------------------------------------------------------- renderer

def test_camera_away_from_mesh_gives_empty_mask():
    sphere = M.uv_sphere(radius=0.4)
    cam = _camera(pos=(0, 0, 2.0), look=(0, 0, 4.0), res=(32, 32))
    img = M.render_mesh(sphere, cam)
    assert img.mask.sum() == 0


def test_facing_quad_fully_lit_interior():
    verts = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0],
                      [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    colors = np.ones((4, 3))
    quad = M.ColoredMesh(verts, faces, colors)
    cam = _camera(pos=(0, 0, 1.5), res=(32, 32))
    # Light from the camera: normal and light align head on.
    img = M.render_mesh(quad, cam, light=np.array([0.0, 0.0, 1.0]), ambient=0.0)
    assert img.mask.all()
    inner = img.rgb[8:-8, 8:-8]
    assert np.min(inner) > 0.999


def test_sphere_mask_area_matches_projected_disk():
    r, d = 0.5, 2.0
    sphere = M.uv_sphere(radius=r, n_lat=64, n_lon=96)
    cam = _camera(pos=(0, 0, d), res=(128, 128))
    img = M.render_mesh(sphere, cam)
    frac = img.mask.mean()
    tan_half = np.tan(cam.fov_y / 2)
    rho = np.tan(np.arcsin(r / d))          # image-plane silhouette radius
    want = np.pi * rho ** 2 / (4 * tan_half ** 2)
    assert abs(frac - want) / want < 0.02


def test_render_deterministic():
    sphere = M.uv_sphere(radius=0.5)
    cam = _camera(res=(48, 48))
    a = M.render_mesh(sphere, cam)
    b = M.render_mesh(sphere, cam)
    assert np.array_equal(a.rgb, b.rgb)
    assert np.array_equal(a.mask, b.mask)


def test_empty_mesh_renders_background():
    empty = M.ColoredMesh(np.zeros((0, 3)), np.zeros((0, 3), int), np.zeros((0, 3)))
    img = M.render_mesh(empty, _camera(res=(16, 16)))
    assert img.rgb.sum() == 0 and img.mask.sum() == 0


def test_fast_renderer_agrees_with_ray_tracer():
    sphere = M.uv_sphere(radius=0.5, n_lat=32, n_lon=48)
    cam = _camera(res=(64, 64))
    a = M.render_mesh(sphere, cam)
    b = M.render_mesh_fast(sphere, cam)
    # Same camera model and shading: masks differ only on silhouette pixels.
    disagree = np.mean(a.mask != b.mask)
    assert disagree < 0.02
    both = (a.mask > 0) & (b.mask > 0)
    assert np.max(np.abs(a.rgb[both] - b.rgb[both])) < 0.15


def test_rejects_non_unit_light():
    sphere = M.uv_sphere(radius=0.4)
    with pytest.raises(ParameterError):
        M.render_mesh(sphere, _camera(res=(8, 8)), light=np.array([0.0, 0.0, 2.0]))


# -------------------------------------------------------------- silhouette

def test_silhouette_matches_raytraced_mask():
    sphere = M.uv_sphere(radius=0.5, n_lat=24, n_lon=32)
    cam = _camera(res=(64, 64))
    sil = M.silhouette(sphere, cam)
    ray = M.render_mesh(sphere, cam).mask > 0
    assert np.mean(sil != ray) < 0.01


def test_dilate_zero_radius_identity():
    rng = np.random.default_rng(0)
    mask = rng.random((32, 32)) > 0.8
    assert np.array_equal(M.dilate(mask, 0), mask)


def test_dilate_single_pixel_block():
    mask = np.zeros((9, 9), dtype=bool)
    mask[4, 4] = True
    out = M.dilate(mask, 1)
    want = np.zeros((9, 9), dtype=bool)
    want[3:6, 3:6] = True
    assert np.array_equal(out, want)


def test_dilate_monotone_and_composable():
    rng = np.random.default_rng(1)
    for _ in range(100):
        mask = rng.random((24, 24)) > 0.9
        out = M.dilate(mask, 2)
        assert np.all(out[mask])                      # superset of the input
    mask = rng.random((24, 24)) > 0.85
    assert np.array_equal(M.dilate(M.dilate(mask, 2), 3), M.dilate(mask, 5))


def test_coverage_ratio_and_warning():
    mask = np.zeros((10, 10), dtype=bool)
    mask[:5] = True
    assert M.coverage_ratio(mask) == 0.5
    with pytest.warns(RuntimeWarning):
        assert M.coverage_ratio(np.zeros((4, 4), dtype=bool)) == 0.0


# -------------------------------------------------------------- resolution

def test_effective_resolution_full_coverage():
    assert M.effective_resolution(110, 110, 1.0) == (110, 110)


def test_effective_resolution_half_coverage_hits_155():
    h, w = M.effective_resolution(110, 110, 0.5)
    assert (h, w) == (155, 155)


def test_effective_resolution_quarter_doubles_side():
    h, w = M.effective_resolution(100, 100, 0.25)
    assert (h, w) == (200, 200)


def test_effective_resolution_rejects_degenerate():
    with pytest.raises(DegeneracyError):
        M.effective_resolution(100, 100, 0.0)


# ---------------------------------------------------------- marching cubes

def test_marching_cubes_sphere_radii():
    def sdf(p):
        return np.linalg.norm(p, axis=1) - 0.5

    verts, faces = M.marching_cubes(sdf, ((-1, -1, -1), (1, 1, 1)), 64)
    radii = np.linalg.norm(verts, axis=1)
    cell_diag = np.sqrt(3.0) * (2.0 / 64)
    assert np.all(np.abs(radii - 0.5) < cell_diag)
    assert faces.shape[1] == 3 and faces.max() < len(verts)


def test_marching_cubes_plane_is_exact():
    def sdf(p):
        return p[:, 2] - 0.1

    verts, _ = M.marching_cubes(sdf, ((-1, -1, -1), (1, 1, 1)), 16)
    assert np.max(np.abs(verts[:, 2] - 0.1)) < 1e-9


def test_marching_cubes_empty_surface_raises():
    with pytest.raises(EmptySurfaceError):
        M.marching_cubes(lambda p: np.ones(len(p)),
                         ((-1, -1, -1), (1, 1, 1)), 8)


def test_marching_cubes_vertices_lie_near_zero_set():
    def sdf(p):
        return np.linalg.norm(p - np.array([0.1, 0.0, -0.05]), axis=1) - 0.4

    verts, _ = M.marching_cubes(sdf, ((-1, -1, -1), (1, 1, 1)), 32)
    cell = 2.0 / 32
    assert np.max(np.abs(sdf(verts))) < cell


def test_marching_cubes_watertight_and_outward():
    def sdf(p):
        return np.linalg.norm(p, axis=1) - 0.5

    verts, faces = M.marching_cubes(sdf, ((-1, -1, -1), (1, 1, 1)), 24)
    # Watertight: every interior edge is shared by exactly two triangles.
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)
    # Outward orientation: face normals align with the radial direction.
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    centers = (v0 + v1 + v2) / 3.0
    assert np.mean(np.einsum("fd,fd->f", normals, centers) > 0) > 0.999


# ------------------------------------------------------------------ export

def test_obj_round_trip_single_triangle(tmp_path):
    mesh = M.ColoredMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
        np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    path = tmp_path / "tri.obj"
    M.export_obj(mesh, path)
    back = M.import_obj(path)
    np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-9)
    assert np.array_equal(back.faces, mesh.faces)
    np.testing.assert_allclose(back.colors, mesh.colors, atol=1e-9)


def test_ply_color_quantization(tmp_path):
    mesh = M.ColoredMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
        np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]]))
    path = tmp_path / "tri.ply"
    M.export_ply(mesh, path)
    back = M.import_ply(path)
    assert np.array_equal(np.round(back.colors[0] * 255), [0, 0, 0])
    assert np.array_equal(np.round(back.colors[1] * 255), [255, 255, 255])


def test_ply_round_trip_large_mesh(tmp_path):
    sphere = M.uv_sphere(radius=0.8, n_lat=72, n_lon=144)
    assert sphere.n_vertices > 10000
    path = tmp_path / "sphere.ply"
    M.export_ply(sphere, path)
    back = M.import_ply(path)
    assert np.max(np.abs(back.vertices - sphere.vertices)) < 1e-6
    assert np.array_equal(back.faces, sphere.faces)


# -------------------------------------------------------------------- png

def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    rgb = rng.random((16, 24, 3))
    path = tmp_path / "img.png"
    M.save_png(path, rgb)
    back = M.load_png(path)
    assert np.max(np.abs(back - np.round(rgb * 255) / 255.0)) < 1e-12


def test_png_bytes_round_trip():
    rng = np.random.default_rng(3)
    rgb = rng.random((8, 8, 3))
    blob = M.png_bytes(rgb)
    back = M.png_from_bytes(blob)
    assert np.max(np.abs(back - np.round(rgb * 255) / 255.0)) < 1e-12
