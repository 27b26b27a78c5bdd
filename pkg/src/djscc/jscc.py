"""Learned joint source-channel codec.

The encoder maps an image straight to channel symbols (D stride-2
stages, ReLU, channel-attention gates fed with the instantaneous CSI),
followed by complex packing and exact power normalization. The decoder
mirrors it with transposed convolutions and equalized symbols in.

Bandwidth ratio rho = c_out / (3 * 2^(2D+1)) channel symbols per source
sample; with P = 1 each transmission spends exactly K = rho * 3HW
symbols of unit average power.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from . import channel as ch
from .autodiff import Tensor
from .nn import Conv2d, ConvTranspose2d, Linear, Module
from .optim import Adam
from .rng import stream


@dataclass
class JsccConfig:
    c_out: int = 16
    downsample: int = 2
    base_width: int = 32
    snr_lo_db: float = 0.0
    snr_hi_db: float = 14.0
    channel: str = "awgn"
    h_var: float = 1.0
    power: float = 1.0

    def __post_init__(self):
        if self.c_out < 2 or self.c_out % 2:
            raise ValueError(f"c_out must be even and >= 2, got {self.c_out}")
        if self.downsample < 1:
            raise ValueError(f"downsample must be >= 1, got {self.downsample}")
        if self.snr_lo_db > self.snr_hi_db:
            raise ValueError(
                f"snr range inverted: [{self.snr_lo_db}, {self.snr_hi_db}]")
        if self.channel not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel kind {self.channel!r}")


def rate_for_config(c_out: int, downsample: int) -> Fraction:
    """Exact bandwidth ratio rho."""
    if c_out % 2:
        raise ValueError(f"c_out must be even, got {c_out}")
    return Fraction(c_out, 3 * 2 ** (2 * downsample + 1))


def symbol_count(c_out: int, downsample: int, h: int, w: int) -> int:
    """K for an HxW image; checks spatial divisibility and the rate law."""
    f = 2 ** downsample
    if h % f or w % f:
        raise ValueError(f"image {h}x{w} not divisible by 2^{downsample}")
    k = c_out * (h // f) * (w // f) // 2
    assert Fraction(k) == rate_for_config(c_out, downsample) * 3 * h * w
    return k


def csi_vector(gamma_db, h, batch: int, lo: float, hi: float) -> np.ndarray:
    """[N,3] conditioning rows: normalized SNR, re(h), im(h)."""
    g = np.broadcast_to(np.atleast_1d(np.asarray(gamma_db, dtype=np.float64)),
                        (batch,))
    if hi > lo:
        g = np.clip((g - lo) / (hi - lo), 0.0, 1.0)
    else:
        g = np.zeros(batch)
    if isinstance(h, tuple):
        hr = np.broadcast_to(np.asarray(h[0], dtype=np.float64).reshape(-1), (batch,))
        hi_arr = np.broadcast_to(np.asarray(h[1], dtype=np.float64).reshape(-1), (batch,))
    else:
        h = complex(h)
        hr = np.full(batch, h.real)
        hi_arr = np.full(batch, h.imag)
    return np.stack([g, hr, hi_arr], axis=1)


class SEGate(Module):
    """Squeeze-excite gate whose squeeze vector is augmented with CSI."""

    def __init__(self, channels, rng, reduce=4):
        hidden = max(channels // reduce, 4)
        self.fc1 = Linear(channels + 3, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def __call__(self, x, csi: Tensor):
        pooled = ad.tmean(x, axis=(2, 3))
        z = ad.relu(self.fc1(ad.concat([pooled, csi], axis=1)))
        gate = ad.sigmoid(self.fc2(z))
        N, C = gate.data.shape
        return ad.mul(x, ad.reshape(gate, (N, C, 1, 1)))


class JsccEncoder(Module):
    def __init__(self, cfg: JsccConfig, rng):
        w = cfg.base_width
        self.convs = []
        self.gates = []
        c = 3
        for _ in range(cfg.downsample):
            self.convs.append(Conv2d(c, w, 4, rng, stride=2, pad=1))
            self.gates.append(SEGate(w, rng))
            c = w
        self.head = Conv2d(c, cfg.c_out, 3, rng, pad=1)

    def __call__(self, x, csi):
        h = x
        for conv, gate in zip(self.convs, self.gates):
            h = gate(ad.relu(conv(h)), csi)
        return self.head(h)


class JsccDecoder(Module):
    def __init__(self, cfg: JsccConfig, rng):
        w = cfg.base_width
        self.stem = Conv2d(cfg.c_out, w, 3, rng, pad=1)
        self.stem_gate = SEGate(w, rng)
        self.deconvs = []
        self.gates = []
        for _ in range(cfg.downsample):
            self.deconvs.append(ConvTranspose2d(w, w, 4, rng, stride=2, pad=1))
            self.gates.append(SEGate(w, rng))
        self.head = Conv2d(w, 3, 3, rng, pad=1, init_scale=0.1)

    def __call__(self, feat, csi):
        h = self.stem_gate(ad.relu(self.stem(feat)), csi)
        for deconv, gate in zip(self.deconvs, self.gates):
            h = gate(ad.relu(deconv(h)), csi)
        return ad.clamp(self.head(h), -1.0, 1.0)


class JsccModel(Module):
    def __init__(self, cfg: JsccConfig, rng):
        self.cfg_ = cfg
        self.enc = JsccEncoder(cfg, rng)
        self.dec = JsccDecoder(cfg, rng)

    @property
    def cfg(self) -> JsccConfig:
        return self.cfg_


def encode(model: JsccModel, x: Tensor, gamma_db, h) -> ch.ComplexSymbolVector:
    """Image batch -> normalized complex symbols [N, K]."""
    cfg = model.cfg
    N, C, H, W = x.data.shape
    symbol_count(cfg.c_out, cfg.downsample, H, W)  # validates divisibility
    csi = Tensor(csi_vector(gamma_db, h, N, cfg.snr_lo_db, cfg.snr_hi_db))
    feat = model.enc(x, csi)
    return ch.normalize_power(ch.pack_complex(feat), power=cfg.power)


def decode(model: JsccModel, v: ch.ComplexSymbolVector, gamma_db, h,
           image_hw: tuple[int, int]) -> Tensor:
    """Equalized symbols -> image batch in [-1, 1]."""
    cfg = model.cfg
    H, W = image_hw
    f = 2 ** cfg.downsample
    N = v.re.data.shape[0] if v.re.data.ndim > 1 else 1
    feat = ch.unpack_complex(v, (N, cfg.c_out, H // f, W // f))
    csi = Tensor(csi_vector(gamma_db, h, N, cfg.snr_lo_db, cfg.snr_hi_db))
    return model.dec(feat, csi)


def transmit(model: JsccModel, x: Tensor, state: ch.ChannelState,
             rng: np.random.Generator) -> Tensor:
    """Full single-state chain: encode, channel, equalize, decode."""
    H, W = x.data.shape[2], x.data.shape[3]
    y = encode(model, x, state.gamma_db, state.h)
    y_hat = ch.apply_channel(y, state, rng)
    y_eq = ch.equalize(y_hat, state.h)
    return decode(model, y_eq, state.gamma_db, state.h, (H, W))


def _draw_channel(cfg: JsccConfig, batch: int, rng) -> tuple:
    gamma = rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db, size=batch)
    if cfg.channel == "rayleigh":
        s = np.sqrt(cfg.h_var / 2.0)
        h_re = rng.standard_normal(batch) * s
        h_im = rng.standard_normal(batch) * s
    else:
        h_re = np.ones(batch)
        h_im = np.zeros(batch)
    sigma2 = cfg.power * cfg.h_var / 10.0 ** (gamma / 10.0)
    return gamma, h_re, h_im, sigma2


def train_step(model: JsccModel, x_np: np.ndarray, opt: Adam, cfg: JsccConfig,
               rng) -> float:
    batch = x_np.shape[0]
    H, W = x_np.shape[2], x_np.shape[3]
    gamma, h_re, h_im, sigma2 = _draw_channel(cfg, batch, rng)
    hpair = (h_re[:, None], h_im[:, None])
    x = Tensor(x_np)
    y = encode(model, x, gamma, hpair)
    y_hat = ch.transmit_symbols(y, hpair, sigma2[:, None], rng)
    y_eq = ch.equalize(y_hat, hpair)
    x_hat = decode(model, y_eq, gamma, hpair, (H, W))
    diff = ad.add(x_hat, ad.mul_scalar(x, -1.0))
    loss = ad.tmean(ad.mul(diff, diff))
    val = loss.item()
    if not np.isfinite(val):
        raise RuntimeError(f"jscc training loss went non-finite: {val}")
    opt.zero_grad()
    ad.backward(loss)
    opt.step()
    return val


def train_jscc(model: JsccModel, images: np.ndarray, seed: int,
               iters: int = 600, batch: int = 16, lr: float = 1e-3,
               log_every: int = 0) -> list[float]:
    """MSE training over random batches and random channel draws."""
    if images.shape[0] == 0:
        raise ValueError("empty training set")
    opt = Adam(model.parameters(), lr=lr)
    r_batch = stream(seed, "jscc", "batch")
    r_chan = stream(seed, "jscc", "channel")
    losses = []
    for it in range(iters):
        idx = r_batch.integers(0, images.shape[0], size=min(batch, images.shape[0]))
        val = train_step(model, images[idx], opt, model.cfg, r_chan)
        losses.append(val)
        if log_every and (it + 1) % log_every == 0:
            print(f"jscc iter {it + 1}/{iters} loss {val:.5f}")
    return losses
