"""Complex-baseband channel simulation.

Symbols live as (re, im) tensor pairs shaped [..., K] so they stay on
the autodiff tape; noise is reparameterized (mean + sigma * fixed
standard-normal draw), which keeps transmissions differentiable with
respect to the transmitted symbols.

Conventions: average symbol power budget P (default 1), SNR in dB
defined as gamma = P * E[|h|^2] / sigma^2, block fading (one gain per
transmission), zero-forcing equalization conj(h)/|h|^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ZERO_ENERGY_MEAN = 1e-30   # mean per-symbol power below this is unnormalizable
SINGULAR_GAIN_ABS = 1e-12  # |h| below this cannot be inverted


class ZeroEnergyInput(ValueError):
    """Symbol vector carries (numerically) no energy; power scaling undefined."""


class SingularGain(ValueError):
    """Channel gain too close to zero to equalize."""


@dataclass
class ComplexSymbolVector:
    """K complex symbols as parallel real tensors shaped [..., K]."""
    re: Tensor
    im: Tensor
    declared_power: float | None = None

    def __post_init__(self):
        if self.re.data.shape != self.im.data.shape:
            raise ValueError(
                f"re/im shapes disagree: {self.re.data.shape} vs {self.im.data.shape}")

    @property
    def K(self) -> int:
        return self.re.data.shape[-1]

    def power(self) -> float:
        """Empirical mean per-symbol power, off-tape."""
        return float(np.mean(self.re.data ** 2 + self.im.data ** 2))


@dataclass
class ChannelState:
    """Realized channel for one transmission."""
    kind: str                   # "awgn" | "rayleigh"
    h: complex                  # realized gain (1+0j for awgn)
    gamma_db: float
    h_var: float                # E[|h|^2] of the fading law (1.0 for awgn)
    sigma2: float               # total complex noise power

    def __post_init__(self):
        if self.kind not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.sigma2 < 0:
            raise ValueError(f"noise power must be >= 0, got {self.sigma2}")


def snr_to_noise_power(gamma_db: float, power: float = 1.0,
                       h_var: float = 1.0) -> float:
    """sigma^2 such that power * h_var / sigma^2 hits the requested SNR.

    gamma_db = +inf yields exactly 0.0 (noiseless limit).
    """
    if math.isinf(gamma_db) and gamma_db > 0:
        return 0.0
    return power * h_var / (10.0 ** (gamma_db / 10.0))


def sample_rayleigh_gain(rng: np.random.Generator, h_var: float = 1.0) -> complex:
    """One circularly-symmetric complex gaussian gain with E[|h|^2] = h_var."""
    s = math.sqrt(h_var / 2.0)
    return complex(rng.standard_normal() * s, rng.standard_normal() * s)


def awgn_state(gamma_db: float, power: float = 1.0) -> ChannelState:
    return ChannelState("awgn", 1.0 + 0.0j, float(gamma_db), 1.0,
                        snr_to_noise_power(gamma_db, power, 1.0))


def rayleigh_state(gamma_db: float, rng: np.random.Generator,
                   h_var: float = 1.0, power: float = 1.0) -> ChannelState:
    h = sample_rayleigh_gain(rng, h_var)
    return ChannelState("rayleigh", h, float(gamma_db), h_var,
                        snr_to_noise_power(gamma_db, power, h_var))


# ---------------------------------------------------------------------------
# packing

def pack_complex(x: Tensor) -> ComplexSymbolVector:
    """Interpret consecutive feature pairs as (re, im) symbols.

    4-d [N,C,H,W] pairs along the channel axis and flattens to [N, K]
    with K = C/2*H*W; 2-d/1-d inputs pair along the last axis.
    """
    shape = x.data.shape
    if x.data.ndim == 4:
        N, C, H, W = shape
        if C % 2:
            raise ValueError(f"channel axis must be even to form symbols, got {C}")
        xp = ad.reshape(x, (N, C // 2, 2, H, W))
        re = ad.reshape(ad.index_axis(xp, 2, 0), (N, (C // 2) * H * W))
        im = ad.reshape(ad.index_axis(xp, 2, 1), (N, (C // 2) * H * W))
    elif x.data.ndim in (1, 2):
        M = shape[-1]
        if M % 2:
            raise ValueError(f"last axis must be even to form symbols, got {M}")
        xp = ad.reshape(x, shape[:-1] + (M // 2, 2))
        re = ad.index_axis(xp, x.data.ndim, 0)
        im = ad.index_axis(xp, x.data.ndim, 1)
    else:
        raise ValueError(f"pack_complex wants 1/2/4-d input, got shape {shape}")
    return ComplexSymbolVector(re, im)


def unpack_complex(v: ComplexSymbolVector, shape: tuple) -> Tensor:
    """Exact inverse of pack_complex back to the given real shape."""
    shape = tuple(shape)
    if len(shape) == 4:
        N, C, H, W = shape
        re = ad.reshape(v.re, (N, C // 2, 1, H, W))
        im = ad.reshape(v.im, (N, C // 2, 1, H, W))
        return ad.reshape(ad.concat([re, im], axis=2), shape)
    M = shape[-1]
    re = ad.reshape(v.re, shape[:-1] + (M // 2, 1))
    im = ad.reshape(v.im, shape[:-1] + (M // 2, 1))
    return ad.reshape(ad.concat([re, im], axis=len(shape)), shape)


# ---------------------------------------------------------------------------
# power normalization

def normalize_power(v: ComplexSymbolVector, power: float = 1.0) -> ComplexSymbolVector:
    """Scale each symbol vector so sum |y_k|^2 = K * power exactly.

    Differentiable; raises ZeroEnergyInput when a vector's mean symbol
    power sits at or below ZERO_ENERGY_MEAN.
    """
    K = v.K
    energy = ad.tsum(ad.add(ad.mul(v.re, v.re), ad.mul(v.im, v.im)),
                     axis=-1, keepdims=True)
    if np.any(energy.data <= ZERO_ENERGY_MEAN * K):
        raise ZeroEnergyInput(
            f"symbol energy {float(energy.data.min()):.3e} too small to normalize")
    scale = ad.pow_scalar(ad.mul_scalar(energy, 1.0 / (K * power)), -0.5)
    return ComplexSymbolVector(ad.mul(v.re, scale), ad.mul(v.im, scale),
                               declared_power=power)


# ---------------------------------------------------------------------------
# transmission

def _complex_mul(re, im, c_re, c_im):
    """(re + i im) * (c_re + i c_im) with tensor/constant operands."""
    rr = ad.mul(re, c_re) if isinstance(c_re, Tensor) else ad.mul_scalar(re, c_re)
    ii = ad.mul(im, c_im) if isinstance(c_im, Tensor) else ad.mul_scalar(im, c_im)
    ri = ad.mul(re, c_im) if isinstance(c_im, Tensor) else ad.mul_scalar(re, c_im)
    ir = ad.mul(im, c_re) if isinstance(c_re, Tensor) else ad.mul_scalar(im, c_re)
    return ad.add(rr, ad.mul_scalar(ii, -1.0)), ad.add(ri, ir)


def transmit_symbols(v: ComplexSymbolVector, h, sigma2,
                     rng: np.random.Generator) -> ComplexSymbolVector:
    """y_hat = h*y + n with n ~ CN(0, sigma2), reparameterized.

    h may be a python complex (one transmission) or a pair of [N,1]
    arrays (h_re, h_im) for a batch; sigma2 a float or an [N,1] array.
    """
    shape = v.re.data.shape
    dt = v.re.data.dtype
    nr = rng.standard_normal(shape)
    ni = rng.standard_normal(shape)
    if isinstance(h, tuple):
        h_re, h_im = Tensor(h[0]), Tensor(h[1])
        std = np.sqrt(np.asarray(sigma2, dtype=np.float64) / 2.0)
        n_re = Tensor((nr * std).astype(dt))
        n_im = Tensor((ni * std).astype(dt))
    else:
        h_re, h_im = float(h.real), float(h.imag)
        std = math.sqrt(float(sigma2) / 2.0)
        n_re = Tensor((nr * std).astype(dt))
        n_im = Tensor((ni * std).astype(dt))
    y_re, y_im = _complex_mul(v.re, v.im, h_re, h_im)
    return ComplexSymbolVector(ad.add(y_re, n_re), ad.add(y_im, n_im))


def apply_channel(v: ComplexSymbolVector, state: ChannelState,
                  rng: np.random.Generator) -> ComplexSymbolVector:
    """Push one normalized symbol vector through the realized channel."""
    return transmit_symbols(v, state.h, state.sigma2, rng)


def equalize(v: ComplexSymbolVector, h) -> ComplexSymbolVector:
    """Zero-forcing: multiply by conj(h)/|h|^2.

    h: python complex, or (h_re, h_im) arrays for a batch. Raises
    SingularGain when any |h| falls below SINGULAR_GAIN_ABS.
    """
    if isinstance(h, tuple):
        h_re = np.asarray(h[0], dtype=np.float64)
        h_im = np.asarray(h[1], dtype=np.float64)
        mag2 = h_re ** 2 + h_im ** 2
        if np.any(np.sqrt(mag2) < SINGULAR_GAIN_ABS):
            raise SingularGain(
                f"|h| = {float(np.sqrt(mag2.min())):.3e} below invertibility threshold")
        dt = v.re.data.dtype
        c_re = Tensor((h_re / mag2).astype(dt))
        c_im = Tensor((-h_im / mag2).astype(dt))
        y_re, y_im = _complex_mul(v.re, v.im, c_re, c_im)
    else:
        if abs(h) < SINGULAR_GAIN_ABS:
            raise SingularGain(f"|h| = {abs(h):.3e} below invertibility threshold")
        c = h.conjugate() / (abs(h) ** 2)
        y_re, y_im = _complex_mul(v.re, v.im, float(c.real), float(c.imag))
    return ComplexSymbolVector(y_re, y_im)
