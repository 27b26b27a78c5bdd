"""Image-quality and link-quality metrics.

All functions take plain numpy arrays in the [-1, 1] image convention
(peak-to-peak 2) unless a different peak is passed. SSIM follows the
standard 11x11 gaussian-window construction; the window shrinks to the
largest odd size that fits when images are smaller than the window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .channel import ComplexSymbolVector

# standard 5-scale weights; truncated and renormalized for fewer scales
_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def mse(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 2.0) -> float:
    """10 log10(peak^2 / mse); +inf for identical inputs."""
    m = mse(x, y)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)


def _to_nchw(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise ValueError(f"expected 2/3/4-d image array, got shape {x.shape}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    # valid-mode gaussian filtering, channels handled independently
    N, C, H, W = x.shape
    k = win.shape[0]
    y = backend.conv2d_forward(np.ascontiguousarray(x.reshape(N * C, 1, H, W)),
                               win[None, None], None, 1, 0)
    return y.reshape(N, C, H - k + 1, W - k + 1)


def _ssim_terms(x, y, peak, win_size, sigma):
    N, C, H, W = x.shape
    k = min(win_size, H if H % 2 else H - 1, W if W % 2 else W - 1)
    if k < 3:
        raise ValueError(f"image {H}x{W} too small for ssim")
    win = _gaussian_window(k, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mx = _filter(x, win)
    my = _filter(y, win)
    mxx = _filter(x * x, win)
    myy = _filter(y * y, win)
    mxy = _filter(x * y, win)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2.0 * cov + c2) / (vx + vy + c2)
    return lum, cs


def ssim(x, y, peak: float = 2.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity in [-1, 1]."""
    xa, ya = _to_nchw(x), _to_nchw(y)
    if xa.shape != ya.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {ya.shape}")
    lum, cs = _ssim_terms(xa, ya, peak, win_size, sigma)
    return float(np.mean(lum * cs))


def _downsample2(x: np.ndarray) -> np.ndarray:
    N, C, H, W = x.shape
    x = x[:, :, :H - H % 2, :W - W % 2]
    return x.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))


def ms_ssim(x, y, peak: float = 2.0, scales: int = 3, win_size: int = 11,
            sigma: float = 1.5) -> float:
    """Multi-scale SSIM over dyadic scales.

    Contrast-structure factors are clamped at 0 before the weighted
    geometric mean so fractional powers stay real on flat desk images.
    """
    xa, ya = _to_nchw(x), _to_nchw(y)
    if xa.shape != ya.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {ya.shape}")
    if scales < 1 or scales > len(_MSSSIM_WEIGHTS):
        raise ValueError(f"scales must be in 1..{len(_MSSSIM_WEIGHTS)}, got {scales}")
    w = np.asarray(_MSSSIM_WEIGHTS[:scales])
    w = w / w.sum()
    vals = []
    for s in range(scales):
        lum, cs = _ssim_terms(xa, ya, peak, win_size, sigma)
        if s < scales - 1:
            vals.append(max(float(np.mean(cs)), 0.0))
            xa, ya = _downsample2(xa), _downsample2(ya)
        else:
            vals.append(max(float(np.mean(lum * cs)), 0.0))
    out = 1.0
    for v, wi in zip(vals, w):
        out *= v ** wi
    return float(out)


def empirical_snr(tx: ComplexSymbolVector, rx: ComplexSymbolVector, h) -> float:
    """Measured SNR in dB: ||h y||^2 over ||y_hat - h y||^2.

    h: python complex, or (h_re, h_im) row arrays like transmit_symbols
    takes, in which case energies aggregate over all rows.
    """
    ty = (tx.re.data + 1j * tx.im.data).astype(np.complex128)
    ry = (rx.re.data + 1j * rx.im.data).astype(np.complex128)
    if isinstance(h, tuple):
        hc = np.asarray(h[0], dtype=np.float64) + 1j * np.asarray(h[1], dtype=np.float64)
    else:
        hc = complex(h)
    sig = hc * ty
    num = float(np.sum(np.abs(sig) ** 2))
    den = float(np.sum(np.abs(ry - sig) ** 2))
    if den == 0.0:
        return math.inf
    return 10.0 * math.log10(num / den)


def image_metrics(x, y, peak: float = 2.0) -> dict:
    return {
        "psnr_db": psnr(x, y, peak),
        "ssim": ssim(x, y, peak),
        "ms_ssim": ms_ssim(x, y, peak),
        "mse": mse(x, y),
    }


@dataclass
class MetricReport:
    """Per-image metric rows plus arithmetic-mean aggregation."""
    rows: list[dict] = field(default_factory=list)

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def aggregate(self, keys=("psnr_db", "ssim", "ms_ssim", "mse")) -> dict:
        if not self.rows:
            raise ValueError("no rows to aggregate")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in keys}
