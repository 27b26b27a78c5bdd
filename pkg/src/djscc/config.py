"""Experiment configuration: TOML in, validated dataclasses out."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .jscc import JsccConfig, rate_for_config


@dataclass
class TrainConfig:
    seed: int = 0
    jscc_iters: int = 800
    jscc_batch: int = 16
    jscc_lr: float = 1e-3
    latent_iters: int = 3000
    latent_batch: int = 16
    latent_lr: float = 1e-3
    base_iters: int = 800
    base_batch: int = 16
    base_lr: float = 1e-3
    control_iters: int = 2000
    control_batch: int = 16
    control_lr: float = 2e-3


@dataclass
class DiffusionConfig:
    timesteps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.1
    widths: tuple = (32, 64)
    emb_dim: int = 128
    ctx_dim: int = 64


@dataclass
class SamplerConfig:
    steps: int = 50
    guidance: float = 32.0  # lambda, clamped to [0, latent element count]


@dataclass
class SweepConfig:
    gammas: tuple = (0.0, 5.0, 10.0)
    lambdas: tuple = (0.0, 16.0, 32.0, 64.0)
    max_images: int = 100
    channel_seeds: int = 1


@dataclass
class ExperimentConfig:
    dataset_path: str = "data/desk"
    image_size: int = 32
    out_dir: str = "runs/desk"
    latent_channels: int = 4
    latent_width: int = 32
    jscc: JsccConfig = field(default_factory=JsccConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def rho(self) -> Fraction:
        return rate_for_config(self.jscc.c_out, self.jscc.downsample)

    def validate(self, need_dataset: bool = True) -> None:
        if self.image_size % 8 or self.image_size % 2 ** self.jscc.downsample:
            raise ValueError(
                f"image size {self.image_size} incompatible with codec strides")
        if self.diffusion.timesteps < 2:
            raise ValueError("need at least 2 diffusion steps")
        if not 1 <= self.sampler.steps <= self.diffusion.timesteps:
            raise ValueError(
                f"sampler steps {self.sampler.steps} outside 1..{self.diffusion.timesteps}")
        if need_dataset and not (Path(self.dataset_path) / "train").is_dir():
            raise FileNotFoundError(
                f"dataset path {self.dataset_path!r} has no train/ split "
                f"(run gen-dataset first)")


def _apply(obj, table: dict, path: str) -> None:
    for key, val in table.items():
        if not hasattr(obj, key):
            raise ValueError(f"unknown config key {path}.{key}")
        cur = getattr(obj, key)
        if isinstance(cur, tuple) and isinstance(val, list):
            val = tuple(val)
        elif isinstance(cur, float) and isinstance(val, int):
            val = float(val)
        elif type(val) is not type(cur):
            raise ValueError(
                f"config key {path}.{key} expects {type(cur).__name__}, "
                f"got {type(val).__name__}")
        setattr(obj, key, val)


def load_config(path, need_dataset: bool = True) -> ExperimentConfig:
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    cfg = ExperimentConfig()
    sections = {
        "jscc": cfg.jscc,
        "diffusion": cfg.diffusion,
        "sampler": cfg.sampler,
        "train": cfg.train,
        "sweep": cfg.sweep,
    }
    for key, val in raw.items():
        if key == "dataset":
            if "path" in val:
                cfg.dataset_path = str(val["path"])
            if "image_size" in val:
                cfg.image_size = int(val["image_size"])
            extra = set(val) - {"path", "image_size"}
            if extra:
                raise ValueError(f"unknown dataset keys: {sorted(extra)}")
        elif key == "latent":
            if "z_channels" in val:
                cfg.latent_channels = int(val["z_channels"])
            if "base_width" in val:
                cfg.latent_width = int(val["base_width"])
            extra = set(val) - {"z_channels", "base_width"}
            if extra:
                raise ValueError(f"unknown latent keys: {sorted(extra)}")
        elif key == "output":
            if "dir" in val:
                cfg.out_dir = str(val["dir"])
            extra = set(val) - {"dir"}
            if extra:
                raise ValueError(f"unknown output keys: {sorted(extra)}")
        elif key in sections:
            if key == "jscc":
                # rebuild so __post_init__ revalidates
                base = {f: getattr(cfg.jscc, f) for f in
                        ("c_out", "downsample", "base_width", "snr_lo_db",
                         "snr_hi_db", "channel", "h_var", "power")}
                for k, v in val.items():
                    if k not in base:
                        raise ValueError(f"unknown config key jscc.{k}")
                    base[k] = float(v) if isinstance(base[k], float) else v
                cfg.jscc = JsccConfig(**base)
            else:
                _apply(sections[key], val, key)
        else:
            raise ValueError(f"unknown config section [{key}]")
    cfg.validate(need_dataset=need_dataset)
    return cfg
