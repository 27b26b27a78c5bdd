"""Deterministic latent image codec.

Three stride-2 stages squeeze an image to a compact latent map (4
channels at 1/8 resolution by default); the decoder mirrors them. The
denoiser operates on these latents, and the same encoder doubles as
the spatial-condition extractor, so whatever it maps a decoded image
to is by construction comparable with the clean-image latent.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d, ConvTranspose2d, Module
from .optim import Adam
from .rng import stream


class LatentCodec(Module):
    def __init__(self, rng, z_channels: int = 4, base_width: int = 32):
        self.z_channels = z_channels
        w = base_width
        self.enc = [
            Conv2d(3, w, 4, rng, stride=2, pad=1),
            Conv2d(w, 2 * w, 4, rng, stride=2, pad=1),
            Conv2d(2 * w, 2 * w, 4, rng, stride=2, pad=1),
        ]
        self.enc_head = Conv2d(2 * w, z_channels, 3, rng, pad=1)
        self.dec_stem = Conv2d(z_channels, 2 * w, 3, rng, pad=1)
        self.dec = [
            ConvTranspose2d(2 * w, 2 * w, 4, rng, stride=2, pad=1),
            ConvTranspose2d(2 * w, w, 4, rng, stride=2, pad=1),
            ConvTranspose2d(w, w, 4, rng, stride=2, pad=1),
        ]
        self.dec_head = Conv2d(w, 3, 3, rng, pad=1, init_scale=0.1)

    @property
    def factor(self) -> int:
        return 8


def encode_latent(model: LatentCodec, x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.data.shape[1] != 3:
        raise ValueError(f"expected [N,3,H,W] images, got {x.data.shape}")
    if x.data.shape[2] % model.factor or x.data.shape[3] % model.factor:
        raise ValueError(
            f"image {x.data.shape[2]}x{x.data.shape[3]} not divisible by {model.factor}")
    h = x
    for conv in model.enc:
        h = ad.relu(conv(h))
    return model.enc_head(h)


def decode_latent(model: LatentCodec, z: Tensor) -> Tensor:
    if z.data.ndim != 4 or z.data.shape[1] != model.z_channels:
        raise ValueError(
            f"expected [N,{model.z_channels},h,w] latents, got {z.data.shape}")
    h = ad.relu(model.dec_stem(z))
    for deconv in model.dec:
        h = ad.relu(deconv(h))
    return ad.clamp(model.dec_head(h), -1.0, 1.0)


def train_latent(model: LatentCodec, images: np.ndarray, seed: int,
                 iters: int = 1200, batch: int = 16, lr: float = 1e-3,
                 log_every: int = 0) -> list[float]:
    """Plain MSE autoencoder training."""
    if images.shape[0] == 0:
        raise ValueError("empty training set")
    opt = Adam(model.parameters(), lr=lr)
    r_batch = stream(seed, "latent", "batch")
    losses = []
    for it in range(iters):
        idx = r_batch.integers(0, images.shape[0], size=min(batch, images.shape[0]))
        x = Tensor(images[idx])
        x_hat = decode_latent(model, encode_latent(model, x))
        diff = ad.add(x_hat, ad.mul_scalar(x, -1.0))
        loss = ad.tmean(ad.mul(diff, diff))
        val = loss.item()
        if not np.isfinite(val):
            raise RuntimeError(f"latent training loss went non-finite: {val}")
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        losses.append(val)
        if log_every and (it + 1) % log_every == 0:
            print(f"latent iter {it + 1}/{iters} loss {val:.5f}")
    return losses


def latent_std(model: LatentCodec, images: np.ndarray, batch: int = 64) -> float:
    """Global latent standard deviation over a set, for diffusion rescaling."""
    total = 0.0
    count = 0
    with ad.no_grad():
        for i in range(0, images.shape[0], batch):
            z = encode_latent(model, Tensor(images[i:i + batch])).data
            total += float(np.sum(z.astype(np.float64) ** 2))
            count += z.size
    if count == 0:
        raise ValueError("empty image set")
    return float(np.sqrt(total / count))
