"""The seven pipeline stages, each reading and writing workdir artifacts.

Every command is idempotent: outputs are written atomically, all
randomness flows from the config seed, and each stage's product is a
file so later stages can be rerun in isolation.
"""

from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager

import numpy as np
from PIL import Image as PILImage

from .. import body as bodymod
from .. import field as fieldmod
from .. import guidance
from .. import meshops
from .. import motiongen
from .. import posegen
from .. import shapegen
from ..errors import ConfigError, DegeneracyError
from ..rotations import sixd_to_axis_angle
from .config import PipelineConfig

_STAGE_IDS = {"shape": 1, "init-field": 2, "sculpt": 3, "extract": 4,
              "pose": 5, "motion": 6, "animate": 7}


def stage_rng(cfg: PipelineConfig, stage: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _STAGE_IDS[stage]])


@contextmanager
def workdir_lock(workdir):
    """One command at a time per working directory."""
    os.makedirs(workdir, exist_ok=True)
    lock_path = os.path.join(workdir, ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"{lock_path} exists: another command is running in this "
            f"directory (delete the file if that command crashed)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        if os.path.exists(lock_path):
            os.unlink(lock_path)


def write_json(path, payload) -> None:
    path = os.fspath(path)
    dirname = os.path.dirname(path) or "."
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _subdir(cfg: PipelineConfig, name: str) -> str:
    path = os.path.join(cfg.workdir, name)
    os.makedirs(path, exist_ok=True)
    return path


# ------------------------------------------------------------- components

def load_template_body(cfg: PipelineConfig) -> bodymod.TemplateBody:
    if cfg.body_path:
        return bodymod.load_body(cfg.body_path)
    return bodymod.make_procedural_body(cfg.body_level)


def template_mesh(cfg: PipelineConfig, body: bodymod.TemplateBody,
                  beta: np.ndarray) -> meshops.ColoredMesh:
    """The shaped body posed in the canonical standing pose."""
    rest = bodymod.apply_shape(body, beta)
    verts = bodymod.lbs(body, rest, bodymod.theta_stand())
    return meshops.ColoredMesh(verts, body.faces,
                               bodymod.default_vertex_colors(body))


def load_beta(cfg: PipelineConfig) -> np.ndarray:
    path = os.path.join(cfg.workdir, "shape", "beta.json")
    if not os.path.exists(path):
        raise ConfigError(f"{path} missing: run the shape stage first")
    with open(path) as fh:
        return np.asarray(json.load(fh)["beta"], dtype=np.float64)


def _default_target(cfg: PipelineConfig, side: int) -> np.ndarray:
    """Derived mock target: the template render with rotated channels."""
    body = load_template_body(cfg)
    beta = np.zeros(10)
    beta_path = os.path.join(cfg.workdir, "shape", "beta.json")
    if os.path.exists(beta_path):
        beta = load_beta(cfg)
    mesh = template_mesh(cfg, body, beta)
    cam = shapegen.frontal_camera(resolution=(side, side))
    rgb = meshops.render_mesh_fast(mesh, cam, ambient=1.0).rgb
    return rgb[:, :, [2, 0, 1]]


def build_oracle(cfg: PipelineConfig, resolution: int):
    """Oracle instance sized for a stage's render resolution."""
    mode = cfg.oracle.mode
    if mode == "mock-hash":
        return guidance.HashEmbeddingOracle(cfg.oracle.hash_dim)
    if mode == "mock-target":
        if cfg.oracle.target_image:
            target = meshops.load_png(cfg.oracle.target_image)
            img = PILImage.fromarray(meshops.to_uint8(target))
            img = img.resize((resolution, resolution), PILImage.BILINEAR)
            target = np.asarray(img, dtype=np.float64) / 255.0
        else:
            target = _default_target(cfg, resolution)
        return guidance.TargetImageOracle(target)
    return guidance.http_oracle(cfg.oracle.url, timeout=cfg.oracle.timeout)


def _shape_codebook(cfg: PipelineConfig) -> shapegen.ShapeCodebook:
    cache = os.path.join(_subdir(cfg, "cache"), "shape_codebook.avc")
    if os.path.exists(cache):
        book = shapegen.ShapeCodebook.load(cache)
        if book.size == cfg.shape.codebook_size and book.seed == cfg.seed:
            return book
    corpus = shapegen.synthetic_beta_corpus(cfg.shape.corpus_size,
                                            seed=cfg.seed)
    vae, _ = shapegen.train_shape_vae(corpus, epochs=cfg.shape.vae_epochs,
                                      seed=cfg.seed)
    book = shapegen.build_shape_codebook(
        vae, samples=cfg.shape.codebook_samples, k=cfg.shape.codebook_size,
        seed=cfg.seed)
    book.save(cache)
    return book


def _pose_codebook(cfg: PipelineConfig) -> posegen.PoseCodebook:
    cache = os.path.join(_subdir(cfg, "cache"), "pose_codebook.avp")
    if os.path.exists(cache):
        book = posegen.PoseCodebook.load(cache)
        if book.size == cfg.pose.codebook_size and book.seed == cfg.seed:
            return book
    if cfg.pose.corpus_path:
        corpus = posegen.load_pose_corpus(cfg.pose.corpus_path)
    else:
        corpus = posegen.synthetic_pose_corpus(cfg.pose.corpus_size,
                                               seed=cfg.seed)
    vae, _ = posegen.train_pose_vae(corpus, epochs=cfg.pose.vae_epochs,
                                    seed=cfg.seed)
    book = posegen.build_pose_codebook(vae, corpus,
                                       k=cfg.pose.codebook_size,
                                       seed=cfg.seed)
    book.save(cache)
    return book


def _motion_vae(cfg: PipelineConfig) -> motiongen.MotionVae:
    cache = os.path.join(_subdir(cfg, "cache"), "motion_vae.avf")
    if os.path.exists(cache):
        vae = motiongen.MotionVae.load(cache)
        if vae.length == cfg.motion.length and vae.seed == cfg.seed:
            return vae
    vae = motiongen.MotionVae(
        seed=cfg.seed, length=cfg.motion.length, d_model=cfg.motion.d_model,
        heads=cfg.motion.heads, enc_layers=cfg.motion.enc_layers,
        dec_layers=cfg.motion.dec_layers, latent_dim=cfg.motion.latent_dim)
    corpus = motiongen.synthetic_motion_corpus(
        cfg.motion.corpus_size, seed=cfg.seed, length=cfg.motion.length)
    motiongen.train_motion_vae(vae, corpus, epochs=cfg.motion.vae_epochs,
                               kl_weight=cfg.weights.kl_motion, seed=cfg.seed,
                               checkpoint_path=cache)
    return vae


def _stage1_views(cfg: PipelineConfig, mesh: meshops.ColoredMesh):
    cams = fieldmod.ring_cameras(
        count=cfg.stage1.ring_views, elevated=cfg.stage1.elevated_views,
        radius=cfg.stage1.view_radius,
        resolution=(cfg.stage1.resolution, cfg.stage1.resolution))
    return fieldmod.render_template_views(mesh, cams)


def _loss_weights(cfg: PipelineConfig) -> fieldmod.LossWeights:
    return fieldmod.LossWeights(
        eikonal=cfg.weights.eikonal, mask=cfg.weights.mask,
        clip_color=cfg.weights.clip_color, clip_gray=cfg.weights.clip_gray)


# ---------------------------------------------------------------- stages

def cmd_shape(cfg: PipelineConfig) -> dict:
    """Pick the coarse body shape for the shape prompt."""
    rng = stage_rng(cfg, "shape")
    _ = rng  # the query itself is an exhaustive deterministic scan
    body = load_template_body(cfg)
    book = _shape_codebook(cfg)
    oracle = build_oracle(cfg, cfg.shape.render_resolution)
    camera = shapegen.frontal_camera(
        resolution=(cfg.shape.render_resolution,) * 2)
    result = shapegen.query_shape(
        book, cfg.prompts.shape, cfg.prompts.neutral, body, oracle,
        camera=camera, maximize_raw_score=cfg.shape.flip_score)

    out = _subdir(cfg, "shape")
    write_json(os.path.join(out, "beta.json"), {
        "index": result.index,
        "beta": [float(b) for b in result.beta],
        "prompt": cfg.prompts.shape,
    })
    write_json(os.path.join(out, "score_table.json"), {
        "scores": [None if not np.isfinite(s) else float(s)
                   for s in result.scores],
    })
    mesh = template_mesh(cfg, body, result.beta)
    meshops.export_obj(mesh, os.path.join(out, "template_mesh.obj"))
    meshops.export_ply(mesh, os.path.join(out, "template_mesh.ply"))
    return {"index": result.index, "beta": result.beta}


def cmd_init_field(cfg: PipelineConfig) -> dict:
    """Fit the implicit avatar to multiview renders of the template."""
    rng = stage_rng(cfg, "init-field")
    body = load_template_body(cfg)
    mesh = template_mesh(cfg, body, load_beta(cfg))
    views = _stage1_views(cfg, mesh)

    out = _subdir(cfg, "field")
    ckpt = os.path.join(out, "stage1.avf")
    warnings_list = []
    if len(views) < 8:
        warnings_list.append(f"only {len(views)} views configured")
    if cfg.stage1.resume and os.path.exists(ckpt):
        field = fieldmod.AvatarField.load(ckpt)
    else:
        field = fieldmod.AvatarField(seed=cfg.seed, hidden=cfg.stage1.hidden)
    import warnings as warnmod
    with warnmod.catch_warnings():
        warnmod.simplefilter("ignore", RuntimeWarning)
        fit = fieldmod.fit_stage1(
            field, views, cfg.stage1.iterations, rng, lr=cfg.stage1.lr,
            batch_rays=cfg.stage1.batch_rays, weights=_loss_weights(cfg),
            checkpoint_path=ckpt, checkpoint_every=cfg.stage1.checkpoint_every)
    iou = fieldmod.mask_iou(field, views)
    report = {
        "iou": iou,
        "iterations": field.step,
        "views": len(views),
        "final_loss": fit.history[-1] if fit.history else None,
        "warnings": warnings_list,
    }
    write_json(os.path.join(out, "iou_report.json"), report)
    with open(os.path.join(out, "stage1_log.jsonl"), "w") as fh:
        for row in fit.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return report


def cmd_sculpt(cfg: PipelineConfig) -> dict:
    """Oracle-guided sculpting and texturing of the fitted field."""
    rng = stage_rng(cfg, "sculpt")
    body = load_template_body(cfg)
    beta = load_beta(cfg)
    mesh = template_mesh(cfg, body, beta)
    views = _stage1_views(cfg, mesh)

    out = _subdir(cfg, "field")
    stage1_path = os.path.join(out, "stage1.avf")
    if not os.path.exists(stage1_path):
        raise ConfigError(f"{stage1_path} missing: run init-field first")
    field = fieldmod.AvatarField.load(stage1_path)
    field.reset_stylized(seed=cfg.seed + 1000)

    side = cfg.stage2.base_resolution
    oracle = build_oracle(cfg, side)
    prompts = guidance.augment_prompts(cfg.prompts.appearance,
                                       face_period=cfg.stage2.face_period)
    head = bodymod.joint_world_positions(
        body, bodymod.theta_stand())[bodymod.HEAD_JOINT]
    snapshot_dir = _subdir(cfg, "snapshots") if cfg.stage2.snapshot_every \
        else None
    fixed_cam = shapegen.frontal_camera(resolution=(side, side)) \
        if cfg.stage2.fixed_camera else None
    config = fieldmod.SculptConfig(
        weights=_loss_weights(cfg), lr=cfg.stage2.lr, base_resolution=side,
        dilation_radius=cfg.stage2.dilation_radius,
        use_effective_resolution=cfg.stage2.use_effective_resolution,
        shade_color_term=cfg.stage2.shade_color_term, fixed_camera=fixed_cam,
        face_period=cfg.stage2.face_period,
        snapshot_every=cfg.stage2.snapshot_every, snapshot_dir=snapshot_dir,
        checkpoint_path=os.path.join(out, "stage2.avf"))
    sampler = guidance.CameraSampler(resolution=(side, side))
    stats = fieldmod.sculpt_stage2(
        field, views, mesh, prompts, oracle, cfg.stage2.iterations, rng,
        config=config, face_point=head, camera_sampler=sampler)

    with open(os.path.join(out, "stage2_log.jsonl"), "w") as fh:
        for row in stats.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    report = {
        "iterations": cfg.stage2.iterations,
        "oracle_loss_first": stats.oracle_loss_first,
        "oracle_loss_last": stats.oracle_loss_last,
        "rays_evaluated": stats.rays_evaluated,
        "rays_total": stats.rays_total,
    }
    write_json(os.path.join(out, "sculpt_report.json"), report)
    return report


def cmd_extract(cfg: PipelineConfig) -> dict:
    """Marching cubes, color sampling, skinning transfer, zero-pose rig."""
    body = load_template_body(cfg)
    beta = load_beta(cfg)
    stage2_path = os.path.join(cfg.workdir, "field", "stage2.avf")
    if not os.path.exists(stage2_path):
        raise ConfigError(f"{stage2_path} missing: run sculpt first")
    field = fieldmod.AvatarField.load(stage2_path)

    b = cfg.extract.bound
    verts, faces = meshops.marching_cubes(
        lambda p: field.sdf_raw(p), ((-b, -b, -b), (b, b, b)),
        cfg.extract.grid)
    colors = np.clip(field.color_raw(verts, "stylized"), 0.0, 1.0)

    stand = bodymod.theta_stand()
    rest = bodymod.apply_shape(body, beta)
    template_posed = bodymod.lbs(body, rest, stand)
    weights = bodymod.transfer_skinning(verts, body,
                                        source_vertices=template_posed)
    rig_body = bodymod.TemplateBody(
        vertices=verts, faces=faces, joints=body.joints,
        parents=body.parents, weights=weights,
        shapes=np.zeros((len(verts), 3, 10)),
        joint_names=list(body.joint_names))
    zero_pose_verts = bodymod.inverse_lbs(rig_body, verts, stand)
    reposed = bodymod.lbs(rig_body, zero_pose_verts, stand)
    round_trip = float(np.max(np.abs(reposed - verts)))

    out = _subdir(cfg, "avatar")
    mesh = meshops.ColoredMesh(zero_pose_verts, faces, colors)
    meshops.export_obj(mesh, os.path.join(out, "avatar.obj"))
    meshops.export_ply(mesh, os.path.join(out, "avatar.ply"))
    np.savez(os.path.join(out, "rig.npz"), vertices=zero_pose_verts,
             faces=faces, colors=colors, weights=weights,
             joints=body.joints, parents=body.parents)
    report = {
        "vertices": int(len(verts)),
        "faces": int(len(faces)),
        "repose_error": round_trip,
        "weight_row_sums_ok": bool(
            np.allclose(weights.sum(axis=1), 1.0, atol=1e-9)),
    }
    write_json(os.path.join(out, "extract_report.json"), report)
    return report


def cmd_pose(cfg: PipelineConfig) -> dict:
    """Rank codebook poses against the motion prompt."""
    body = load_template_body(cfg)
    book = _pose_codebook(cfg)
    oracle = build_oracle(cfg, cfg.pose.render_resolution)
    camera = shapegen.frontal_camera(
        resolution=(cfg.pose.render_resolution,) * 2)
    candidates = posegen.generate_candidates(
        book, cfg.prompts.motion, body, oracle, k=cfg.pose.top_k,
        camera=camera, maximize_raw_score=cfg.pose.flip_score)

    out = _subdir(cfg, "pose")
    write_json(os.path.join(out, "candidates.json"), {
        "prompt": cfg.prompts.motion,
        "indices": [int(i) for i in candidates.indices],
        "scores": [float(s) for s in candidates.scores],
        "poses": [[[float(v) for v in row] for row in pose]
                  for pose in candidates.poses],
    })
    for rank in range(candidates.k):
        rgb = posegen.render_pose(body, candidates.poses[rank], camera)
        meshops.save_png(os.path.join(out, f"candidate_{rank}.png"), rgb)
    return {"indices": candidates.indices.tolist(),
            "scores": candidates.scores.tolist()}


def cmd_motion(cfg: PipelineConfig) -> dict:
    """Latent motion synthesis against the ranked candidates."""
    body = load_template_body(cfg)
    cand_path = os.path.join(cfg.workdir, "pose", "candidates.json")
    if not os.path.exists(cand_path):
        raise ConfigError(f"{cand_path} missing: run pose first")
    with open(cand_path) as fh:
        candidates = np.asarray(json.load(fh)["poses"], dtype=np.float64)

    vae = _motion_vae(cfg)
    oracle = build_oracle(cfg, cfg.motion.render_resolution) \
        if cfg.weights.clip_motion > 0 else None
    camera = shapegen.frontal_camera(
        resolution=(cfg.motion.render_resolution,) * 2)
    weights = motiongen.MotionWeights(
        kl=cfg.weights.kl_motion, delta=cfg.weights.delta,
        clip=cfg.weights.clip_motion, clip_stride=cfg.weights.clip_stride)
    result = motiongen.optimize_motion_latent(
        vae, candidates, cfg.prompts.motion, oracle, cfg.motion.iterations,
        weights=weights, lr=cfg.motion.lr, seed=cfg.seed, body=body,
        camera=camera)

    out = _subdir(cfg, "motion")
    motiongen.export_motion_json(os.path.join(out, "motion.json"),
                                 result.sequence, fps=cfg.animate.fps)
    with open(os.path.join(out, "motion_log.jsonl"), "w") as fh:
        for row in result.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return {"frames": result.sequence.length,
            "final": result.history[-1] if result.history else None}


def cmd_animate(cfg: PipelineConfig) -> dict:
    """Drive the extracted rig with the motion and render a turntable."""
    rig_path = os.path.join(cfg.workdir, "avatar", "rig.npz")
    motion_path = os.path.join(cfg.workdir, "motion", "motion.json")
    for path, stage in ((rig_path, "extract"), (motion_path, "motion")):
        if not os.path.exists(path):
            raise ConfigError(f"{path} missing: run {stage} first")
    rig = np.load(rig_path)
    poses, roots, _ = motiongen.load_motion_json(motion_path)

    rig_body = bodymod.TemplateBody(
        vertices=rig["vertices"], faces=rig["faces"].astype(np.int64),
        joints=rig["joints"], parents=rig["parents"].astype(np.int64),
        weights=rig["weights"], shapes=np.zeros((len(rig["vertices"]), 3, 10)))
    res = cfg.animate.resolution
    camera = meshops.Camera(
        np.array([0.0, 0.1, cfg.animate.camera_radius]), np.zeros(3),
        np.array([0.0, 1.0, 0.0]), np.pi / 3, (res, res))

    out = _subdir(cfg, "frames")
    skipped = []
    for i in range(poses.shape[0]):
        if not np.all(np.isfinite(poses[i])):
            skipped.append(i)
            continue
        verts = bodymod.lbs(rig_body, rig_body.vertices, poses[i])
        verts = verts + roots[i][None, :]
        mesh = meshops.ColoredMesh(verts, rig_body.faces, rig["colors"])
        img = meshops.render_mesh_fast(mesh, camera, ambient=0.35)
        meshops.save_png(os.path.join(out, f"frame_{i:03d}.png"), img.rgb)
    report = {"frames": int(poses.shape[0] - len(skipped)),
              "skipped": skipped}
    write_json(os.path.join(out, "animate_report.json"), report)
    if skipped:
        import logging
        logging.getLogger(__name__).warning(
            "skipped %d degenerate frames: %s", len(skipped), skipped)
    return report


COMMANDS = {
    "shape": cmd_shape,
    "init-field": cmd_init_field,
    "sculpt": cmd_sculpt,
    "extract": cmd_extract,
    "pose": cmd_pose,
    "motion": cmd_motion,
    "animate": cmd_animate,
}


def run_command(name: str, cfg: PipelineConfig):
    if name not in COMMANDS:
        raise ConfigError(f"unknown command {name!r}")
    with workdir_lock(cfg.workdir):
        return COMMANDS[name](cfg)


_ = DegeneracyError, sixd_to_axis_angle  # re-exported for callers
