import numpy as np
import pytest

from avatarforge import diffmath as dm
from avatarforge import field as F
from avatarforge import guidance as G
from avatarforge.diffmath import Tensor
from avatarforge.errors import DimensionError, NumericalAbortError
from avatarforge.meshops import Camera

from helpers import central_diff, rel_err


def make_plane_field(c: float = 0.0, hidden: int = 3) -> F.AvatarField:
    """A field whose distance net computes c - z to ~1e-15 via saturated
    softplus layers, so rays marching toward +z cross into the surface.
    Each hidden layer adds a constant 40 which the output layer removes."""
    field = F.AvatarField(seed=0, hidden=hidden, sdf_bands=1, color_bands=0)
    n_hidden = field.f.n_layers - 1
    for i, (w, b) in enumerate(zip(field.f.weights, field.f.biases)):
        w.data = np.zeros_like(w.data)
        b.data = np.zeros_like(b.data)
        if i == 0:
            w.data[2, 0] = -1.0      # raw z coordinate of the encoding
            b.data[0] = 40.0
        elif i < n_hidden:
            w.data[0, 0] = 1.0
            b.data[0] = 40.0
        else:
            w.data[0, 0] = 1.0
            b.data[0] = -40.0 * n_hidden + c
    return field


def head_on_rays(n: int = 4, q: int = 16, z0: float = 1.0) -> F.RayBatch:
    """Rays marching straight down +z toward the plane z = 0."""
    origins = np.zeros((n, 3))
    origins[:, 2] = -z0
    origins[:, 0] = np.linspace(-0.2, 0.2, n)
    dirs = np.tile([0.0, 0.0, 1.0], (n, 1))
    t = np.tile(np.linspace(0.2, 2.0, q), (n, 1))
    return F.RayBatch(origins, dirs, t)


# ------------------------------------------------------------ weights

def test_weights_all_positive_sdf_are_zero():
    f_vals = Tensor(np.ones((5, 16)))
    w = F.render_weights(f_vals, Tensor(50.0))
    assert np.array_equal(w.data, np.zeros((5, 16)))


def test_weights_match_quadrature_oracle_on_single_crossing():
    # Oracle: dense quadrature of the continuous weight density
    # phi_s(f(t)) / integral phi_s(f(u)) du for a linear f with one crossing.
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = 32
        t = np.linspace(0.0, 2.0, q)
        t0 = rng.uniform(0.4, 1.6)
        slope = -rng.uniform(0.8, 1.2)
        s = rng.uniform(64.0, 256.0)
        f_line = slope * (t - t0)
        w = F.render_weights_raw(f_line[None, :], s)[0]

        dense = np.linspace(0.0, 2.0, 20001)
        dens = dm.logistic_density(slope * (dense - t0) * 1.0, 1.0)
        # density of phi_s(f(t)) in t: s-scale folds into f; use cdf form
        cdf = dm.logistic_cdf(slope * (dense - t0), s)
        pdf = -np.gradient(cdf, dense)          # decreasing cdf along ray
        pdf = np.maximum(pdf, 0.0)
        pdf /= np.trapezoid(pdf, dense)
        masses = []
        for i in range(q - 1):
            sel = (dense >= t[i]) & (dense < t[i + 1])
            masses.append(np.trapezoid(pdf[sel], dense[sel]))
        oracle_argmax = int(np.argmax(masses))
        got_argmax = int(np.argmax(w))
        assert abs(got_argmax - oracle_argmax) <= 1
        assert w.sum() > 0.99
        _ = dens


def test_weights_invariant_to_power_of_two_rescaling():
    rng = np.random.default_rng(1)
    f_vals = rng.normal(size=(10, 24))
    a = F.render_weights_raw(f_vals, 37.0)
    b = F.render_weights_raw(2.0 * f_vals, 37.0 / 2.0)
    assert np.array_equal(a, b)


def test_weights_nonnegative_and_subunit():
    rng = np.random.default_rng(2)
    for _ in range(50):
        f_vals = rng.normal(size=(20, 16)) * rng.uniform(0.1, 2.0)
        s = rng.uniform(1.0, 300.0)
        w = F.render_weights_raw(f_vals, s)
        assert np.all(w >= 0.0)
        assert np.all(w.sum(axis=1) <= 1.0 + 1e-9)


def test_weights_taped_matches_raw():
    rng = np.random.default_rng(3)
    f_vals = rng.normal(size=(6, 12))
    taped = F.render_weights(Tensor(f_vals), Tensor(25.0)).data
    raw = F.render_weights_raw(f_vals, 25.0)
    assert np.max(np.abs(taped - raw)) < 1e-15


def test_weights_need_two_samples():
    with pytest.raises(DimensionError):
        F.render_weights(Tensor(np.ones((3, 1))), Tensor(10.0))


# ------------------------------------------------------------ sampling

def test_importance_fallback_uniform_on_zero_mass():
    rng = np.random.default_rng(4)
    t = np.tile(np.linspace(0.0, 1.0, 9), (3, 1))
    masses = np.zeros((3, 8))
    out = F.importance_resample(t, masses, 64, rng, near=0.0, far=1.0)
    assert out.shape == (3, 64)
    assert np.all((out >= 0.0) & (out <= 1.0))
    # Spread roughly uniformly: mean near 0.5.
    assert abs(out.mean() - 0.5) < 0.05


def test_importance_concentrates_in_heavy_interval():
    rng = np.random.default_rng(5)
    t = np.tile(np.linspace(0.0, 1.0, 9), (1, 1))
    masses = np.full((1, 8), 1e-4)
    masses[0, 3] = 1.0
    draws = F.importance_resample(np.repeat(t, 1000, axis=0),
                                  np.repeat(masses, 1000, axis=0),
                                  1, rng, near=0.0, far=1.0)
    inside = (draws >= t[0, 3]) & (draws <= t[0, 4])
    assert inside.mean() >= 0.8


def test_sample_rays_strictly_increasing_64():
    field = make_plane_field()
    cam = Camera(np.array([0.0, 0.0, -1.5]), np.zeros(3),
                 np.array([0.0, 1.0, 0.0]), np.pi / 3, (8, 8))
    rays = F.sample_rays(field, cam, [3, 4], [2, 5], np.random.default_rng(6))
    assert rays.t.shape == (2, 64)
    assert np.all(np.diff(rays.t, axis=1) > 0.0)


# ------------------------------------------------------------- renders

def test_render_color_miss_is_black():
    field = F.AvatarField(seed=1, hidden=4, sdf_bands=1, color_bands=0)
    rays = head_on_rays()
    # Default init is biased empty: weights vanish far from any surface.
    field.f.biases[-1].data = np.array([5.0])
    for w, b in zip(field.f.weights, field.f.biases):
        w.data *= 0.0
    color = F.render_color(field, rays, "stylized")
    assert np.max(np.abs(color.data)) < 1e-12


def test_render_color_constant_net_is_opacity_times_constant():
    field = make_plane_field()
    for w, b in zip(field.c_c.weights, field.c_c.biases):
        w.data *= 0.0
        b.data *= 0.0
    field.c_c.biases[-1].data = np.array([0.8, -0.4, 0.0])
    k = 1.0 / (1.0 + np.exp(-field.c_c.biases[-1].data))
    rays = head_on_rays(q=48)
    out = F.render_rays(field, rays, colors=("stylized",))
    want = out["mask"].data[:, None] * k[None, :]
    assert np.max(np.abs(out["color_stylized"].data - want)) < 1e-12


def test_render_color_bounded_by_max_sample():
    rng = np.random.default_rng(7)
    field = F.AvatarField(seed=2, hidden=6, sdf_bands=2, color_bands=1)
    rays = F.RayBatch(rng.normal(size=(5, 3)) * 0.1,
                      np.tile([0.0, 0.0, 1.0], (5, 1)),
                      np.sort(rng.uniform(0.1, 2.0, size=(5, 32)), axis=1))
    out = F.render_rays(field, rays, colors=("stylized",))
    pts = rays.points()
    samples = field.color_raw(pts, "stylized").reshape(5, 32, 3)
    assert np.all(out["color_stylized"].data <= samples.max(axis=1) + 1e-12)


def test_render_normal_planar_field():
    field = make_plane_field(c=0.0)
    rays = head_on_rays(q=32)
    normals, valid = F.render_normal(field, rays)
    assert np.all(valid)
    # Distance grows toward -z, so the surface faces the camera at -z.
    want = np.tile([0.0, 0.0, -1.0], (4, 1))
    assert np.max(np.abs(normals.data - want)) < 1e-6


def test_render_normal_background_flagged():
    field = make_plane_field(c=100.0)  # surface far outside the span
    rays = head_on_rays(q=16)
    _, valid = F.render_normal(field, rays)
    assert not np.any(valid)


def test_render_gray_head_on_and_ambient():
    field = make_plane_field()
    rays = head_on_rays(q=64)
    gray = F.render_gray(field, rays, light=np.array([0.0, 0.0, -1.0]),
                         ambient=0.0)
    assert np.all(gray.data > 0.98)          # n = l, full opacity
    perp = F.render_gray(field, rays, light=np.array([1.0, 0.0, 0.0]),
                         ambient=0.2)
    assert np.max(np.abs(perp.data - 0.2 * 1.0)) < 0.02   # n . l = 0
    flat = F.render_gray(field, rays, light=np.array([1.0, 0.0, 0.0]),
                         ambient=1.0)
    np.testing.assert_allclose(flat.data, F.render_mask(field, rays).data,
                               atol=1e-12)


def test_render_shaded_ambient_one_equals_color():
    field = make_plane_field()
    rays = head_on_rays(q=32)
    shaded = F.render_shaded(field, rays, light=np.array([0.0, 0.0, 1.0]),
                             ambient=1.0)
    color = F.render_color(field, rays, "stylized")
    np.testing.assert_allclose(shaded.data, color.data, atol=1e-15)


def test_render_shaded_black_net_stays_black():
    field = make_plane_field()
    for w, b in zip(field.c_c.weights, field.c_c.biases):
        w.data *= 0.0
        b.data *= 0.0
    field.c_c.biases[-1].data = np.array([-40.0, -40.0, -40.0])
    rays = head_on_rays(q=32)
    shaded = F.render_shaded(field, rays, light=np.array([0.0, 0.0, 1.0]),
                             ambient=0.1)
    assert np.max(shaded.data) < 1e-12


def test_render_shaded_never_brighter_than_color():
    field = make_plane_field()
    rays = head_on_rays(q=32)
    shaded = F.render_shaded(field, rays, light=np.array([0.0, 0.0, 1.0]),
                             ambient=0.3)
    color = F.render_color(field, rays, "stylized")
    assert np.all(shaded.data <= color.data + 1e-12)


def test_render_mask_miss_and_hit():
    field = make_plane_field(c=100.0)
    rays = head_on_rays(q=16)
    assert np.max(F.render_mask(field, rays).data) < 1e-9
    field = make_plane_field(c=0.0)
    rays = head_on_rays(q=64)
    assert np.min(F.render_mask(field, rays).data) > 0.99


def test_render_mask_monotone_in_sharpness():
    field = make_plane_field()
    rays = head_on_rays(n=1, q=24)
    masks = []
    for s in (8.0, 16.0, 32.0, 64.0, 128.0):
        field.log_s.data = np.array(np.log(s))
        masks.append(float(F.render_mask(field, rays).data[0]))
    assert all(a < b + 1e-12 for a, b in zip(masks, masks[1:]))


def test_linear_sdf_argmax_brackets_crossing():
    # Stratified sample patterns, matching what the renderer draws.
    rng = np.random.default_rng(8)
    for _ in range(200):
        q = 64
        t = F.stratified_samples(1, q, 0.0, 2.0, rng)[0]
        t0 = rng.uniform(0.5, 1.5)
        f_line = -(t - t0)
        s = rng.uniform(64.0, 512.0)
        w = F.render_weights_raw(f_line[None, :], s)[0]
        k = int(np.argmax(w))
        lo = t[max(k - 1, 0)]
        hi = t[min(k + 1, q - 1)]
        assert lo - 1e-9 <= t0 <= hi + 1e-9


# -------------------------------------------------------------- losses

def test_loss_stage1_perfect_fit_is_zero():
    field = make_plane_field()
    rays = head_on_rays(q=64)
    out = F.render_rays(field, rays, colors=("template",))
    gt_rgb = out["color_template"].data.copy()
    gt_mask = np.ones(4)
    total, parts = F.loss_stage1(field, rays, gt_rgb, gt_mask,
                                 F.LossWeights(), np.random.default_rng(0))
    assert parts["color"] < 1e-12
    assert parts["mask"] < 1e-3
    assert parts["eikonal"] < 1e-9   # exact unit-gradient field
    assert np.isfinite(parts["total"])
    _ = total


def test_loss_stage1_gradient_matches_finite_differences():
    field = F.AvatarField(seed=3, hidden=3, sdf_bands=1, color_bands=0)
    rays = head_on_rays(n=4, q=8)
    rng_master = np.random.default_rng(11)
    gt_rgb = rng_master.random((4, 3))
    gt_mask = np.array([1.0, 1.0, 0.0, 1.0])
    params = field.parameters(("f", "c", "s"))
    weights = F.LossWeights(eikonal=0.3, mask=0.5)

    def run():
        total, _ = F.loss_stage1(field, rays, gt_rgb, gt_mask, weights,
                                 np.random.default_rng(99), eik_samples=8)
        return total

    got = dm.grad_arrays(run(), params)
    arrays = [p.data.copy() for p in params]

    def f(arrs):
        for p, a in zip(params, arrs):
            p.data = a
        return run().item()

    want = central_diff(f, [a.copy() for a in arrays], h=1e-5)
    for p, a in zip(params, arrays):
        p.data = a
    for g, w in zip(got, want):
        assert rel_err(g, w, floor=1e-4) < 1e-4


def test_loss_stage2_reduces_to_stage1():
    field = F.AvatarField(seed=4, hidden=3, sdf_bands=1, color_bands=0)
    rays = head_on_rays(n=4, q=8)
    gt_rgb = np.random.default_rng(0).random((4, 3))
    gt_mask = np.ones(4)
    batch = {"rays": rays, "gt_rgb": gt_rgb, "gt_mask": gt_mask}
    weights = F.LossWeights(clip_color=0.0, clip_gray=0.0)
    t2, p2 = F.loss_stage2(field, batch, weights, np.random.default_rng(5))
    t1, p1 = F.loss_stage1(field, rays, gt_rgb, gt_mask, weights,
                           np.random.default_rng(5))
    assert abs(p1["total"] - p2["total"]) < 1e-12
    _ = t1, t2


def test_oracle_loss_self_match_is_zero():
    rng = np.random.default_rng(12)
    img = rng.random((4, 4, 3))
    oracle = G.TargetImageOracle(img)
    loss = F.oracle_image_loss(Tensor(img), "x", oracle)
    assert abs(loss.item()) < 1e-12


def test_stage2_gradient_through_oracle_path():
    # 2x2 image composed from 4 rays; gradients must flow through the
    # oracle's pixel-space gradient into every network.  The last distance
    # bias is pulled negative so the rays hit surface and the image is
    # far from the zero vector, where the cosine is well conditioned.
    field = F.AvatarField(seed=5, hidden=3, sdf_bands=1, color_bands=0)
    field.f.biases[-1].data = np.array([-0.15])
    rng0 = np.random.default_rng(13)
    # Nudge biases off zero: exact relu kinks are non-differentiable points
    # where finite differences stop being a valid oracle.
    for b in field.c_c.biases[:-1]:
        b.data = rng0.normal(0.0, 0.05, size=b.data.shape)
    rays = head_on_rays(n=4, q=8)
    target = rng0.random((2, 2, 3))
    oracle = G.TargetImageOracle(target)
    params = field.parameters(("f", "c_c", "s"))

    def run():
        out = F.render_rays(field, rays, colors=("stylized",))
        img = dm.reshape(out["color_stylized"], (2, 2, 3))
        return F.oracle_image_loss(img, "t", oracle)

    got = dm.grad_arrays(run(), params)
    arrays = [p.data.copy() for p in params]

    def f(arrs):
        for p, a in zip(params, arrs):
            p.data = a
        return run().item()

    want = central_diff(f, [a.copy() for a in arrays], h=1e-5)
    for p, a in zip(params, arrays):
        p.data = a
    for g, w in zip(got, want):
        assert rel_err(g, w, floor=1e-4) < 1e-3


# ------------------------------------------------------------- training

def _tiny_views(field_res=16):
    from avatarforge.meshops import uv_sphere
    mesh = uv_sphere(radius=0.5, n_lat=12, n_lon=16, color=(0.9, 0.6, 0.4))
    cams = F.ring_cameras(count=8, elevated=0, radius=1.5,
                          resolution=(field_res, field_res))
    return F.render_template_views(mesh, cams), mesh


def test_fit_stage1_zero_iterations_no_change():
    views, _ = _tiny_views()
    field = F.AvatarField(seed=6, hidden=4, sdf_bands=2, color_bands=1)
    before = [p.data.copy() for p in field.parameters()]
    F.fit_stage1(field, views, 0, np.random.default_rng(0))
    for a, b in zip(before, field.parameters()):
        assert np.array_equal(a, b.data)


def test_fit_stage1_deterministic_under_seed():
    views, _ = _tiny_views()
    results = []
    for _ in range(2):
        field = F.AvatarField(seed=7, hidden=4, sdf_bands=2, color_bands=1)
        res = F.fit_stage1(field, views, 12, np.random.default_rng(21),
                           batch_rays=32, eik_samples=16, log_every=4)
        results.append((res.history[-1]["total"],
                        [p.data.copy() for p in field.parameters()]))
    assert results[0][0] == results[1][0]
    for a, b in zip(results[0][1], results[1][1]):
        assert np.array_equal(a, b)


def test_fit_stage1_aborts_on_nan():
    views, _ = _tiny_views()
    field = F.AvatarField(seed=8, hidden=4, sdf_bands=2, color_bands=1)
    field.f.weights[0].data[0, 0] = np.nan
    with pytest.raises(NumericalAbortError):
        F.fit_stage1(field, views, 3, np.random.default_rng(0),
                     batch_rays=16, eik_samples=8)


def test_sculpt_counts_only_silhouette_rays():
    views, mesh = _tiny_views()
    field = F.AvatarField(seed=9, hidden=4, sdf_bands=2, color_bands=1)
    F.fit_stage1(field, views, 5, np.random.default_rng(1), batch_rays=16,
                 eik_samples=8)
    target = np.zeros((24, 24, 3))
    target[8:16, 8:16] = 1.0
    oracle = G.TargetImageOracle(target)
    prompts = G.augment_prompts("a sphere")
    cfg = F.SculptConfig(base_resolution=24, template_batch_rays=16,
                         eik_samples=8, background_kinds=("black",))
    stats = F.sculpt_stage2(field, views, mesh, prompts, oracle, 3,
                            np.random.default_rng(2), config=cfg,
                            face_point=np.array([0.0, 0.4, 0.0]))
    assert 0 < stats.rays_evaluated < stats.rays_total
    assert len(stats.history) == 3


def test_field_checkpoint_round_trip(tmp_path):
    field = F.AvatarField(seed=10, hidden=5, sdf_bands=2, color_bands=1)
    field.step = 42
    path = tmp_path / "field.avf"
    field.save(path)
    loaded = F.AvatarField.load(path)
    assert loaded.step == 42
    for a, b in zip(field.parameters(), loaded.parameters()):
        assert np.array_equal(a.data, b.data)
    pts = np.random.default_rng(1).normal(size=(10, 3))
    assert np.array_equal(field.sdf_raw(pts), loaded.sdf_raw(pts))
