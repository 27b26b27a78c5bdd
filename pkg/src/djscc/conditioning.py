"""Conditioning signals for the denoiser.

Three inputs steer refinement: a spatial latent f_v extracted from the
coarse reconstruction by the (shared) latent encoder, a semantic token
f_t looked up from a label-embedding table (last row = null token), and
the channel state as sinusoidally encoded SNR plus the complex gain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .latent import LatentCodec, encode_latent
from .nn import sinusoidal_embedding

CSI_FREQ_PAIRS = 32  # sin/cos pairs for the SNR scalar


@dataclass
class ConditionSet:
    """Bundle of per-transmission conditions, possibly batched."""
    f_v: Tensor           # [N, C, h, w] spatial latent condition
    f_t: Tensor           # [N, S, E] semantic tokens
    h: object             # complex scalar or (h_re, h_im) arrays
    gamma_db: object      # float or [N] array

    def __post_init__(self):
        if self.f_v.data.ndim != 4:
            raise ValueError(f"f_v must be [N,C,h,w], got {self.f_v.data.shape}")
        if self.f_t.data.ndim != 3:
            raise ValueError(f"f_t must be [N,S,E], got {self.f_t.data.shape}")
        if self.f_v.data.shape[0] != self.f_t.data.shape[0]:
            raise ValueError(
                f"batch mismatch: f_v {self.f_v.data.shape[0]} vs f_t {self.f_t.data.shape[0]}")


def csi_features(gamma_db, h, batch: int, lo: float = 0.0, hi: float = 14.0) -> np.ndarray:
    """[N, 2F+2] rows: sin/cos ladder over clamped SNR, then re(h), im(h).

    Clamping to the training SNR range keeps the features finite for
    the noiseless (+inf dB) smoke path.
    """
    g = np.broadcast_to(np.atleast_1d(np.asarray(gamma_db, dtype=np.float64)),
                        (batch,))
    g = np.clip(g, lo, hi)
    enc = sinusoidal_embedding(g, 2 * CSI_FREQ_PAIRS).astype(np.float64)
    if isinstance(h, tuple):
        hr = np.broadcast_to(np.asarray(h[0], dtype=np.float64).reshape(-1), (batch,))
        him = np.broadcast_to(np.asarray(h[1], dtype=np.float64).reshape(-1), (batch,))
    else:
        h = complex(h)
        hr = np.full(batch, h.real)
        him = np.full(batch, h.imag)
    return np.concatenate([enc, hr[:, None], him[:, None]], axis=1)


def make_label_table(n_labels: int, dim: int, rng) -> Tensor:
    """Embedding table with n_labels class rows plus one null row at the end."""
    if n_labels < 1:
        raise ValueError(f"need at least one label, got {n_labels}")
    data = rng.standard_normal((n_labels + 1, dim)) * 0.02
    return Tensor(data, requires_grad=True)


def null_label_id(table: Tensor) -> int:
    return table.data.shape[0] - 1


def semantic_embedding(table: Tensor, labels) -> Tensor:
    """Label ids -> [N, 1, E] token batch (on the tape when table trains)."""
    ids = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows = ad.take_rows(table, ids)
    return ad.reshape(rows, (ids.shape[0], 1, table.data.shape[1]))


def extract_spatial_condition(x_hat: Tensor, codec: LatentCodec,
                              scale: float = 1.0) -> Tensor:
    """f_v: the coarse reconstruction pushed through the latent encoder.

    Same weights and same scale as the z0 path, so a clean input yields
    exactly the latent the diffusion model was trained on.
    """
    z = encode_latent(codec, x_hat)
    return ad.mul_scalar(z, float(scale))


def assemble_conditions(f_v: Tensor, f_t: Tensor, h, gamma_db) -> ConditionSet:
    return ConditionSet(f_v=f_v, f_t=f_t, h=h, gamma_db=gamma_db)
