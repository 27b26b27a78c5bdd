"""End-to-end orchestration: staged training, transmission runs, sweeps.

Four checkpoints comprise a system: jscc, latent, diffusion-base and
diffusion-control. Later stages only ever read earlier checkpoints;
training the control branch rewrites none of them.

Result CSVs are deterministic byte-for-byte for a fixed (config, seed):
every random draw comes from a keyed stream and floats are serialized
with fixed formats.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import channel as ch
from . import jscc as jscc_mod
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import ConditionSet, null_label_id, semantic_embedding
from .config import ExperimentConfig
from .dataset import SHAPE_CLASSES, load_dataset, save_image
from .diffusion import (NoiseSchedule, guided_sample, make_schedule,
                        pretrain_base, train_control)
from .jscc import JsccModel
from .latent import LatentCodec, decode_latent, encode_latent, latent_std, train_latent
from .metrics import image_metrics
from .rng import stream
from .unet import Denoiser

CSV_HEADER = ("image_id", "seed", "gamma_db", "rho", "lambda", "stage",
              "psnr_db", "ssim", "ms_ssim", "mse", "lpips", "fid", "miou")

STAGE_JSCC = "jscc"
STAGE_DIFFUSION = "diffusion"


# ---------------------------------------------------------------------------
# model construction and checkpoints

def build_models(cfg: ExperimentConfig) -> dict:
    seed = cfg.train.seed
    jm = JsccModel(cfg.jscc, stream(seed, "init", "jscc"))
    codec = LatentCodec(stream(seed, "init", "latent"),
                        z_channels=cfg.latent_channels,
                        base_width=cfg.latent_width)
    dn = Denoiser(stream(seed, "init", "denoiser"),
                  z_channels=cfg.latent_channels,
                  widths=tuple(cfg.diffusion.widths),
                  emb_dim=cfg.diffusion.emb_dim,
                  ctx_dim=cfg.diffusion.ctx_dim,
                  n_labels=len(SHAPE_CLASSES),
                  snr_lo_db=cfg.jscc.snr_lo_db,
                  snr_hi_db=cfg.jscc.snr_hi_db)
    sched = make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start,
                          cfg.diffusion.beta_end)
    return {"jscc": jm, "codec": codec, "denoiser": dn, "sched": sched}


def ckpt_path(cfg: ExperimentConfig, kind: str) -> Path:
    return Path(cfg.out_dir) / "checkpoints" / f"{kind}.ckpt"


def _save_losses(cfg: ExperimentConfig, stage: str, losses) -> None:
    out = Path(cfg.out_dir) / f"losses_{stage}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, f"{v:.8e}"])


def _load_into(path, expected_kind: str, state_tensors: dict) -> None:
    kind, arrays = load_checkpoint(path)
    if kind != expected_kind:
        raise ValueError(f"{path} holds a {kind!r} checkpoint, wanted {expected_kind!r}")
    missing = sorted(set(state_tensors) - set(arrays))
    extra = sorted(set(arrays) - set(state_tensors))
    if missing or extra:
        raise ValueError(f"{path}: state mismatch: missing={missing} extra={extra}")
    for name, t in state_tensors.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(t.data.shape):
            raise ValueError(
                f"{path}: shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
        t.data = np.asarray(arr, dtype=t.data.dtype)


# ---------------------------------------------------------------------------
# training stages

def train_jscc_stage(cfg: ExperimentConfig, log_every: int = 0) -> list[float]:
    data = load_dataset(Path(cfg.dataset_path) / "train")
    models = build_models(cfg)
    losses = jscc_mod.train_jscc(models["jscc"], data.images, cfg.train.seed,
                                 iters=cfg.train.jscc_iters,
                                 batch=cfg.train.jscc_batch,
                                 lr=cfg.train.jscc_lr, log_every=log_every)
    save_checkpoint(ckpt_path(cfg, "jscc"), "jscc", models["jscc"].state_arrays())
    _save_losses(cfg, "jscc", losses)
    return losses


def train_latent_stage(cfg: ExperimentConfig, log_every: int = 0) -> list[float]:
    data = load_dataset(Path(cfg.dataset_path) / "train")
    models = build_models(cfg)
    losses = train_latent(models["codec"], data.images, cfg.train.seed,
                          iters=cfg.train.latent_iters,
                          batch=cfg.train.latent_batch,
                          lr=cfg.train.latent_lr, log_every=log_every)
    save_checkpoint(ckpt_path(cfg, "latent"), "latent",
                    models["codec"].state_arrays())
    _save_losses(cfg, "latent", losses)
    return losses


def pretrain_stage(cfg: ExperimentConfig, log_every: int = 0) -> list[float]:
    data = load_dataset(Path(cfg.dataset_path) / "train")
    models = build_models(cfg)
    codec, dn = models["codec"], models["denoiser"]
    _load_into(ckpt_path(cfg, "latent"), "latent", codec.named_state())
    std = latent_std(codec, data.images)
    if std < 1e-8:
        raise RuntimeError(f"degenerate latent distribution (std={std:.3e})")
    dn.latent_scale.data[:] = 1.0 / std
    losses = pretrain_base(dn, codec, models["sched"], data.images,
                           cfg.train.seed, iters=cfg.train.base_iters,
                           batch=cfg.train.base_batch, lr=cfg.train.base_lr,
                           log_every=log_every)
    save_checkpoint(ckpt_path(cfg, "diffusion-base"), "diffusion-base",
                    {k: t.data for k, t in dn.base_state().items()})
    _save_losses(cfg, "base", losses)
    return losses


def control_stage(cfg: ExperimentConfig, use_csi: bool = True,
                  use_semantic: bool = True, log_every: int = 0) -> list[float]:
    data = load_dataset(Path(cfg.dataset_path) / "train")
    models = build_models(cfg)
    jm, codec, dn = models["jscc"], models["codec"], models["denoiser"]
    _load_into(ckpt_path(cfg, "jscc"), "jscc", jm.named_state())
    _load_into(ckpt_path(cfg, "latent"), "latent", codec.named_state())
    _load_into(ckpt_path(cfg, "diffusion-base"), "diffusion-base", dn.base_state())
    dn.control.init_from(dn.base.core, dn.z_channels)
    losses = train_control(dn, codec, jm, models["sched"], data.images,
                           data.labels, cfg.train.seed,
                           iters=cfg.train.control_iters,
                           batch=cfg.train.control_batch,
                           lr=cfg.train.control_lr,
                           use_csi=use_csi, use_semantic=use_semantic,
                           log_every=log_every)
    save_checkpoint(ckpt_path(cfg, "diffusion-control"), "diffusion-control",
                    {k: t.data for k, t in dn.control_state().items()})
    _save_losses(cfg, "control", losses)
    return losses


def load_stack(cfg: ExperimentConfig) -> dict:
    models = build_models(cfg)
    _load_into(ckpt_path(cfg, "jscc"), "jscc", models["jscc"].named_state())
    _load_into(ckpt_path(cfg, "latent"), "latent", models["codec"].named_state())
    dn = models["denoiser"]
    _load_into(ckpt_path(cfg, "diffusion-base"), "diffusion-base", dn.base_state())
    _load_into(ckpt_path(cfg, "diffusion-control"), "diffusion-control",
               dn.control_state())
    return models


# ---------------------------------------------------------------------------
# transmission

def run_transmission(models: dict, images: np.ndarray, labels: np.ndarray,
                     ids: list[str], gamma_db: float, lam: float, steps: int,
                     seed: int, rho: float, out_dir=None,
                     save_images: bool = False,
                     stages=(STAGE_JSCC, STAGE_DIFFUSION),
                     use_control: bool = True, use_csi: bool = True,
                     use_semantic: bool = True) -> list[dict]:
    """Transmit a batch at one (gamma, lambda) point; one row per image/stage.

    All randomness comes from streams keyed by the transmission seed, so
    identical calls produce identical rows; the channel stream does not
    depend on gamma or lambda, so sweep points share fading and noise
    realizations (paired comparisons).
    """
    jm: JsccModel = models["jscc"]
    codec: LatentCodec = models["codec"]
    dn: Denoiser = models["denoiser"]
    sched: NoiseSchedule = models["sched"]
    cfg = jm.cfg
    n = images.shape[0]
    H, W = images.shape[2], images.shape[3]

    r_chan = stream(seed, "tx", "channel")
    if cfg.channel == "rayleigh":
        s = np.sqrt(cfg.h_var / 2.0)
        h_re = r_chan.standard_normal(n) * s
        h_im = r_chan.standard_normal(n) * s
    else:
        h_re = np.ones(n)
        h_im = np.zeros(n)
    hpair = (h_re[:, None], h_im[:, None])
    sigma2 = ch.snr_to_noise_power(gamma_db, cfg.power, cfg.h_var)

    with ad.no_grad():
        y = jscc_mod.encode(jm, Tensor(images), gamma_db, hpair)
        y_hat = ch.transmit_symbols(y, hpair, np.full((n, 1), sigma2), r_chan)
        y_eq = ch.equalize(y_hat, hpair)
        x_jscc = jscc_mod.decode(jm, y_eq, gamma_db, hpair, (H, W)).data

    outputs = {}
    if STAGE_JSCC in stages:
        outputs[STAGE_JSCC] = x_jscc
    if STAGE_DIFFUSION in stages:
        scale = dn.scale()
        with ad.no_grad():
            f_v = encode_latent(codec, Tensor(x_jscc)).data * scale
            if use_semantic and labels is not None:
                ids_arr = np.asarray(labels, dtype=np.int64)
            else:
                ids_arr = np.full(n, null_label_id(dn.table), dtype=np.int64)
            f_t = semantic_embedding(dn.table, ids_arr)
        cond = ConditionSet(f_v=Tensor(f_v), f_t=f_t, h=(h_re, h_im),
                            gamma_db=gamma_db)
        r_samp = stream(seed, "tx", "sample")
        z = guided_sample(dn, sched, cond, lam, f_v.shape, r_samp, steps=steps,
                          use_control=use_control, use_csi=use_csi)
        with ad.no_grad():
            outputs[STAGE_DIFFUSION] = decode_latent(codec, Tensor(z / scale)).data

    rows = []
    for stage in stages:
        x_hat = outputs[stage]
        for i in range(n):
            row = {"image_id": ids[i], "seed": seed, "gamma_db": gamma_db,
                   "rho": float(rho), "lambda": lam, "stage": stage}
            row.update(image_metrics(images[i], x_hat[i]))
            rows.append(row)
            if save_images and out_dir is not None:
                img_dir = Path(out_dir) / "images"
                img_dir.mkdir(parents=True, exist_ok=True)
                name = f"{ids[i]}_{stage}_g{gamma_db:g}_l{lam:g}_s{seed}.png"
                save_image(img_dir / name, x_hat[i])
    return rows


def _fmt(row: dict) -> list[str]:
    return [
        str(row["image_id"]),
        str(int(row["seed"])),
        f"{row['gamma_db']:.6g}",
        f"{row['rho']:.10g}",
        f"{row['lambda']:.6g}",
        str(row["stage"]),
        f"{row['psnr_db']:.6f}",
        f"{row['ssim']:.6f}",
        f"{row['ms_ssim']:.6f}",
        f"{row['mse']:.8e}",
        "", "", "",  # perceptual metrics not computed at desk scale
    ]


def write_results(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(_fmt(row))


def transmit_command(cfg: ExperimentConfig, gamma_db: float, seed: int,
                     lam: float | None = None, steps: int | None = None,
                     out_dir=None, max_images: int | None = None) -> list[dict]:
    models = load_stack(cfg)
    data = load_dataset(Path(cfg.dataset_path) / "test")
    k = len(data) if max_images is None else min(max_images, len(data))
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    rows = run_transmission(
        models, data.images[:k], data.labels[:k], data.ids[:k], gamma_db,
        cfg.sampler.guidance if lam is None else lam,
        cfg.sampler.steps if steps is None else steps,
        seed, float(cfg.rho), out_dir=out, save_images=True)
    write_results(out / "results.csv", rows)
    return rows


def sweep_command(cfg: ExperimentConfig, seed: int, out_dir=None) -> list[dict]:
    """Grid over configured gammas x lambdas x channel seeds, one CSV."""
    models = load_stack(cfg)
    data = load_dataset(Path(cfg.dataset_path) / "test")
    k = min(cfg.sweep.max_images, len(data))
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    rows = []
    for gamma in cfg.sweep.gammas:
        for lam in cfg.sweep.lambdas:
            for ks in range(cfg.sweep.channel_seeds):
                rows.extend(run_transmission(
                    models, data.images[:k], data.labels[:k], data.ids[:k],
                    float(gamma), float(lam), cfg.sampler.steps, seed + ks,
                    float(cfg.rho), out_dir=out, save_images=False))
    write_results(out / "results.csv", rows)
    return rows


def evaluate_csv(path) -> list[dict]:
    """Aggregate a results CSV by (stage, gamma, lambda); returns the table."""
    groups: dict[tuple, list[dict]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {reader.fieldnames}")
        for rec in reader:
            key = (rec["stage"], float(rec["gamma_db"]), float(rec["lambda"]))
            groups.setdefault(key, []).append(rec)
    table = []
    for (stage, gamma, lam), recs in sorted(groups.items()):
        table.append({
            "stage": stage, "gamma_db": gamma, "lambda": lam,
            "count": len(recs),
            "psnr_db": float(np.mean([float(r["psnr_db"]) for r in recs])),
            "ssim": float(np.mean([float(r["ssim"]) for r in recs])),
            "ms_ssim": float(np.mean([float(r["ms_ssim"]) for r in recs])),
            "mse": float(np.mean([float(r["mse"]) for r in recs])),
        })
    return table
