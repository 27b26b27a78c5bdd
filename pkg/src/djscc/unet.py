"""Latent denoiser: a small UNet plus an initially-silent control branch.

The base UNet predicts noise from (z_t, step, semantic tokens). The
control branch is a trainable copy of the encoder+middle that also sees
the spatial condition; its outputs enter the base decoder through
zero-initialized 1x1 convs, so at init the full model is bit-identical
to the base alone. The CSI embedding joins the time embedding through
an MLP whose output layer starts at zero, for the same reason.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conditioning import ConditionSet, csi_features, make_label_table
from .nn import (Conv2d, GroupNorm, Linear, Module, sinusoidal_embedding,
                 zero_conv)


class ResBlock(Module):
    """GroupNorm/SiLU/conv x2 with an additive step-embedding injection."""

    def __init__(self, c_in, c_out, emb_dim, rng):
        self.gn1 = GroupNorm(c_in)
        self.conv1 = Conv2d(c_in, c_out, 3, rng, pad=1)
        self.emb_proj = Linear(emb_dim, c_out, rng)
        self.gn2 = GroupNorm(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, pad=1)
        self.conv2.w.data[...] = 0.0  # block starts as identity (plus skip proj)
        self.conv2.b.data[...] = 0.0
        self.skip = Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def __call__(self, x, emb):
        h = self.conv1(ad.silu(self.gn1(x)))
        e = self.emb_proj(ad.silu(emb))
        N, C = e.data.shape
        h = ad.add(h, ad.reshape(e, (N, C, 1, 1)))
        h = self.conv2(ad.silu(self.gn2(h)))
        sk = x if self.skip is None else self.skip(x)
        return ad.add(h, sk)


class CrossAttention(Module):
    """Single-head attention from spatial tokens onto external tokens."""

    def __init__(self, channels, ctx_dim, rng):
        self.norm = GroupNorm(channels)
        self.wq = Linear(channels, channels, rng)
        self.wk = Linear(ctx_dim, channels, rng)
        self.wv = Linear(ctx_dim, channels, rng)
        self.wo = Linear(channels, channels, rng, zero_init=True)

    def __call__(self, x, ctx):
        N, C, H, W = x.data.shape
        tokens = ad.transpose(ad.reshape(self.norm(x), (N, C, H * W)), (0, 2, 1))
        q = self.wq(tokens)
        k = self.wk(ctx)
        v = self.wv(ctx)
        att = ad.softmax(ad.mul_scalar(ad.matmul(q, ad.transpose(k, (0, 2, 1))),
                                       C ** -0.5), axis=-1)
        o = self.wo(ad.matmul(att, v))
        o = ad.reshape(ad.transpose(o, (0, 2, 1)), (N, C, H, W))
        return ad.add(x, o)


class Downsample(Module):
    def __init__(self, channels, rng):
        self.conv = Conv2d(channels, channels, 3, rng, stride=2, pad=1)

    def __call__(self, x):
        return self.conv(x)


class Upsample(Module):
    def __init__(self, channels, rng):
        self.conv = Conv2d(channels, channels, 3, rng, pad=1)

    def __call__(self, x):
        return self.conv(ad.nearest_upsample(x, 2))


class UNetCore(Module):
    """Encoder and middle; shared layout between base and control branch."""

    def __init__(self, c_in, widths, emb_dim, ctx_dim, rng):
        w0, w1 = widths
        self.conv_in = Conv2d(c_in, w0, 3, rng, pad=1)
        self.res1 = ResBlock(w0, w0, emb_dim, rng)
        self.down = Downsample(w0, rng)
        self.res2 = ResBlock(w0, w1, emb_dim, rng)
        self.mid1 = ResBlock(w1, w1, emb_dim, rng)
        self.attn = CrossAttention(w1, ctx_dim, rng)
        self.mid2 = ResBlock(w1, w1, emb_dim, rng)

    def __call__(self, x, emb, ctx):
        s0 = self.conv_in(x)
        s1 = self.res1(s0, emb)
        s2 = self.down(s1)
        s3 = self.res2(s2, emb)
        m = self.mid2(self.attn(self.mid1(s3, emb), ctx), emb)
        return [s0, s1, s2, s3], m


class UNet(Module):
    """Base denoiser: core encoder/middle plus a skip-concat decoder."""

    def __init__(self, z_channels, widths, emb_dim, ctx_dim, rng):
        w0, w1 = widths
        self.core = UNetCore(z_channels, widths, emb_dim, ctx_dim, rng)
        self.dec1 = ResBlock(w1 + w1, w1, emb_dim, rng)
        self.dec2 = ResBlock(w1 + w0, w1, emb_dim, rng)
        self.up = Upsample(w1, rng)
        self.dec3 = ResBlock(w1 + w0, w0, emb_dim, rng)
        self.dec4 = ResBlock(w0 + w0, w0, emb_dim, rng)
        self.out_norm = GroupNorm(w0)
        self.out_conv = Conv2d(w0, z_channels, 3, rng, pad=1)
        self.out_conv.w.data[...] = 0.0  # predict zero noise at init

    def __call__(self, z_t, emb, ctx, extra=None):
        skips, m = self.core(z_t, emb, ctx)
        if extra is not None:
            add_skips, add_m = extra
            skips = [ad.add(s, a) for s, a in zip(skips, add_skips)]
            m = ad.add(m, add_m)
        h = self.dec1(ad.concat([m, skips[3]], axis=1), emb)
        h = self.dec2(ad.concat([h, skips[2]], axis=1), emb)
        h = self.up(h)
        h = self.dec3(ad.concat([h, skips[1]], axis=1), emb)
        h = self.dec4(ad.concat([h, skips[0]], axis=1), emb)
        return self.out_conv(ad.silu(self.out_norm(h)))


class ControlBranch(Module):
    """Copy of the core that also sees f_v; speaks only through zero convs."""

    def __init__(self, z_channels, widths, emb_dim, ctx_dim, rng):
        w0, w1 = widths
        self.core = UNetCore(2 * z_channels, widths, emb_dim, ctx_dim, rng)
        self.zero_skips = [zero_conv(w0, w0, rng), zero_conv(w0, w0, rng),
                           zero_conv(w0, w0, rng), zero_conv(w1, w1, rng)]
        self.zero_mid = zero_conv(w1, w1, rng)

    def init_from(self, base_core: UNetCore, z_channels: int) -> None:
        """Clone base weights; extra input channels enter through zeros."""
        src = base_core.named_state()
        dst = self.core.named_state()
        for name, t in dst.items():
            if name == "conv_in.w":
                t.data[...] = 0.0
                t.data[:, :z_channels] = src[name].data
            else:
                t.data = src[name].data.copy()

    def __call__(self, z_t, f_v, emb, ctx):
        skips, m = self.core(ad.concat([z_t, f_v], axis=1), emb, ctx)
        return [zc(s) for zc, s in zip(self.zero_skips, skips)], self.zero_mid(m)


class Denoiser(Module):
    """Base UNet, control branch, step/CSI embeddings, label table."""

    def __init__(self, rng, z_channels=4, widths=(32, 64), emb_dim=128,
                 ctx_dim=64, n_labels=8, snr_lo_db=0.0, snr_hi_db=14.0):
        self.z_channels = z_channels
        self.emb_dim = emb_dim
        self.snr_lo_db = snr_lo_db
        self.snr_hi_db = snr_hi_db
        self.time_fc1 = Linear(emb_dim, emb_dim, rng)
        self.time_fc2 = Linear(emb_dim, emb_dim, rng)
        self.base = UNet(z_channels, widths, emb_dim, ctx_dim, rng)
        self.csi_fc1 = Linear(2 * 32 + 2, emb_dim, rng)
        self.csi_fc2 = Linear(emb_dim, emb_dim, rng, zero_init=True)
        self.table = make_label_table(n_labels, ctx_dim, rng)
        self.control = ControlBranch(z_channels, widths, emb_dim, ctx_dim, rng)
        self.control.init_from(self.base.core, z_channels)
        self.latent_scale = Tensor(np.ones(1))  # buffer, set after codec training

    # checkpoint split: pretraining owns the first set, control training the second
    _BASE_KEYS = ("time_fc1.", "time_fc2.", "base.", "latent_scale")
    _CTRL_KEYS = ("csi_fc1.", "csi_fc2.", "table", "control.")

    def base_state(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_state().items()
                if k.startswith(self._BASE_KEYS)}

    def control_state(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_state().items()
                if k.startswith(self._CTRL_KEYS)}

    def base_params(self) -> list[Tensor]:
        return [t for k, t in self.base_state().items()
                if k != "latent_scale" and t.requires_grad]

    def control_params(self) -> list[Tensor]:
        return [t for t in self.control_state().values() if t.requires_grad]

    def scale(self) -> float:
        return float(self.latent_scale.data[0])


def denoise(dn: Denoiser, z_t: Tensor, t, cond: ConditionSet,
            use_control: bool = True, use_csi: bool = True) -> Tensor:
    """Predict the noise component of z_t at step t under the conditions."""
    N = z_t.data.shape[0]
    t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.int64)), (N,))
    temb = Tensor(sinusoidal_embedding(t_arr, dn.emb_dim))
    emb = dn.time_fc2(ad.silu(dn.time_fc1(temb)))
    if use_csi:
        feats = csi_features(cond.gamma_db, cond.h, N,
                             lo=dn.snr_lo_db, hi=dn.snr_hi_db)
        cemb = dn.csi_fc2(ad.silu(dn.csi_fc1(Tensor(feats))))
        emb = ad.add(emb, cemb)
    extra = None
    if use_control:
        extra = dn.control(z_t, cond.f_v, emb, cond.f_t)
    return dn.base(z_t, emb, cond.f_t, extra=extra)
