"""Pipeline configuration: profiles, file loading, and validation.

A single TOML or JSON file drives every stage.  The ``profile`` chooses
smoke-scale or paper-scale defaults; explicit keys in the file override
the profile.  All randomness used anywhere in the pipeline derives from
``seed``, so a config file fully determines every artifact byte.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from ..errors import ConfigError


@dataclass
class OracleConfig:
    mode: str = "mock-hash"          # mock-target | mock-hash | http
    url: str = "http://127.0.0.1:8601"
    timeout: float = 30.0
    hash_dim: int = 64
    target_image: str = ""           # png path; empty = derived target


@dataclass
class PromptConfig:
    shape: str = "a tall person"
    appearance: str = "a person in a blue jacket"
    motion: str = "raising both arms"
    neutral: str = "a person"


@dataclass
class WeightConfig:
    eikonal: float = 0.1             # stage losses
    mask: float = 0.5
    clip_color: float = 1.0
    clip_gray: float = 1.0
    kl_motion: float = 1e-4          # motion VAE training
    delta: float = 0.05              # motion optimization
    clip_motion: float = 0.1
    clip_stride: int = 6


@dataclass
class Stage1Config:
    iterations: int = 30000
    ring_views: int = 24
    elevated_views: int = 4
    resolution: int = 64
    view_radius: float = 1.5
    batch_rays: int = 128
    lr: float = 5e-4
    hidden: int = 32
    resume: bool = False
    checkpoint_every: int = 500


@dataclass
class Stage2Config:
    iterations: int = 5000
    base_resolution: int = 64
    dilation_radius: int = 8
    use_effective_resolution: bool = False
    fixed_camera: bool = False
    face_period: int = 4
    shade_color_term: bool = True
    lr: float = 5e-4
    snapshot_every: int = 0
    flip_score: bool = False


@dataclass
class ExtractConfig:
    grid: int = 96
    bound: float = 1.1


@dataclass
class ShapeConfig:
    corpus_size: int = 4000
    vae_epochs: int = 200
    codebook_samples: int = 40960
    codebook_size: int = 2048
    render_resolution: int = 64
    flip_score: bool = False


@dataclass
class PoseConfig:
    corpus_size: int = 8000
    corpus_path: str = ""            # JSON-lines override for real data
    vae_epochs: int = 60
    codebook_size: int = 4096
    top_k: int = 5
    render_resolution: int = 48
    flip_score: bool = False


@dataclass
class MotionConfig:
    corpus_size: int = 200
    vae_epochs: int = 100
    length: int = 60
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    latent_dim: int = 256
    iterations: int = 5000
    lr: float = 1e-2
    render_resolution: int = 32


@dataclass
class AnimateConfig:
    resolution: int = 64
    fps: int = 30
    camera_radius: float = 1.8


@dataclass
class PipelineConfig:
    workdir: str = "runs/default"
    seed: int = 0
    profile: str = "paper"
    body_level: int = 1
    body_path: str = ""              # external body file override
    prompts: PromptConfig = field(default_factory=PromptConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    weights: WeightConfig = field(default_factory=WeightConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    shape: ShapeConfig = field(default_factory=ShapeConfig)
    pose: PoseConfig = field(default_factory=PoseConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    animate: AnimateConfig = field(default_factory=AnimateConfig)

    def validate(self) -> None:
        if self.oracle.mode not in ("mock-target", "mock-hash", "http"):
            raise ConfigError(f"unknown oracle mode {self.oracle.mode!r}")
        for name, count in (("stage1", self.stage1.iterations),
                            ("stage2", self.stage2.iterations),
                            ("motion", self.motion.iterations)):
            if count <= 0:
                raise ConfigError(f"{name}.iterations must be positive")
        if self.pose.corpus_path and not os.path.exists(self.pose.corpus_path):
            raise ConfigError(
                f"pose corpus {self.pose.corpus_path!r} does not exist")
        if self.body_path and not os.path.exists(self.body_path):
            raise ConfigError(f"body file {self.body_path!r} does not exist")
        if self.oracle.target_image and not os.path.exists(
                self.oracle.target_image):
            raise ConfigError(
                f"target image {self.oracle.target_image!r} does not exist")


SMOKE_OVERRIDES = {
    "stage1": {"iterations": 600, "ring_views": 8, "elevated_views": 4,
               "resolution": 48, "batch_rays": 96},
    "stage2": {"iterations": 120, "base_resolution": 48, "fixed_camera": True,
               "snapshot_every": 0},
    "extract": {"grid": 48},
    "shape": {"corpus_size": 1200, "vae_epochs": 40, "codebook_samples": 512,
              "codebook_size": 32, "render_resolution": 32},
    "pose": {"corpus_size": 5000, "vae_epochs": 15, "codebook_size": 24,
             "render_resolution": 24},
    "motion": {"corpus_size": 48, "vae_epochs": 10, "d_model": 32,
               "iterations": 150, "render_resolution": 16},
    "weights": {"clip_motion": 0.0},
    "animate": {"resolution": 48},
}


def _apply(obj, overrides: dict, path: str = "") -> None:
    for key, value in overrides.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {path}{key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _apply(current, value, path=f"{path}{key}.")
        else:
            if isinstance(current, bool) and not isinstance(value, bool):
                raise ConfigError(f"{path}{key} expects a boolean")
            try:
                setattr(obj, key, type(current)(value)
                        if current is not None else value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {path}{key}: {exc}") from exc


def make_config(overrides: dict | None = None) -> PipelineConfig:
    overrides = dict(overrides or {})
    profile = overrides.get("profile", "paper")
    cfg = PipelineConfig()
    if profile == "smoke":
        cfg.profile = "smoke"
        _apply(cfg, SMOKE_OVERRIDES)
    elif profile != "paper":
        raise ConfigError(f"unknown profile {profile!r}")
    _apply(cfg, overrides)
    cfg.validate()
    return cfg


def load_config(path, profile: str | None = None, seed: int | None = None,
                oracle_mode: str | None = None) -> PipelineConfig:
    """Read TOML or JSON (by extension), then apply CLI-level overrides."""
    path = os.fspath(path)
    try:
        if path.endswith(".json"):
            with open(path) as fh:
                data = json.load(fh)
        elif path.endswith(".toml"):
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            raise ConfigError(f"config must be .toml or .json, got {path!r}")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if profile is not None:
        data["profile"] = profile
    if seed is not None:
        data["seed"] = seed
    if oracle_mode is not None:
        data.setdefault("oracle", {})
        data["oracle"]["mode"] = oracle_mode
    return make_config(data)
