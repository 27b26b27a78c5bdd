"""Gaussian diffusion in latent space.

Linear beta schedule; closed-form forward corruption; reverse sampling
through the posterior mean with the variance (1-abar_{t-1})/(1-abar_t)
* beta_t (zero at the final step, so step 1 is deterministic). The
sampler re-estimates the clean latent each step, pulls it toward the
spatial condition by lambda/N, and feeds the pulled estimate back into
the posterior mean - intermediate-latent guidance rather than gradient
guidance.

Schedule arrays are float64 and 1-indexed by convention: index t-1
holds the step-t value; abar_0 := 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import channel as ch
from .autodiff import Tensor
from .conditioning import ConditionSet, null_label_id, semantic_embedding
from .latent import LatentCodec, encode_latent
from .optim import Adam
from .rng import stream
from .unet import Denoiser, denoise

Z0_CLAMP = 3.0  # working range for intermediate clean-latent estimates


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray           # [T]
    alpha: np.ndarray          # [T]
    alpha_bar: np.ndarray      # [T]
    posterior_var: np.ndarray  # [T], index 0 is exactly 0

    def alpha_bar_prev(self, t: int) -> float:
        return float(self.alpha_bar[t - 2]) if t >= 2 else 1.0


def make_schedule(T: int, beta_start: float = 1e-4,
                  beta_end: float = 0.1) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"betas must satisfy 0 < start <= end < 1, "
                         f"got [{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    abar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = (1.0 - abar_prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(T, beta, alpha, alpha_bar, posterior_var)


def _per_sample(coef: np.ndarray, t, ndim: int):
    """Gather per-step coefficients and shape them to broadcast over z."""
    t = np.asarray(t, dtype=np.int64)
    c = coef[t - 1]
    if t.ndim == 0:
        return float(c)
    return c.reshape((-1,) + (1,) * (ndim - 1))


def forward_diffuse(z0: np.ndarray, t, eps: np.ndarray,
                    sched: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps;  t scalar or [N]."""
    ab = _per_sample(sched.alpha_bar, t, z0.ndim)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def single_step_forward(z_prev: np.ndarray, t: int, eps: np.ndarray,
                        sched: NoiseSchedule) -> np.ndarray:
    """One forward kernel application: sqrt(1-beta_t) z_{t-1} + sqrt(beta_t) eps."""
    b = float(sched.beta[t - 1])
    return np.sqrt(1.0 - b) * z_prev + np.sqrt(b) * eps


def estimate_z0(z_t: np.ndarray, t: int, eps_hat: np.ndarray,
                sched: NoiseSchedule) -> np.ndarray:
    """Invert the forward closed form for the clean latent."""
    ab = float(sched.alpha_bar[t - 1])
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def posterior_mean(z_t: np.ndarray, z0: np.ndarray, t: int,
                   sched: NoiseSchedule) -> np.ndarray:
    """Mean of q(z_{t-1} | z_t, z0)."""
    b = float(sched.beta[t - 1])
    ab = float(sched.alpha_bar[t - 1])
    abp = sched.alpha_bar_prev(t)
    c0 = np.sqrt(abp) * b / (1.0 - ab)
    ct = np.sqrt(1.0 - b) * (1.0 - abp) / (1.0 - ab)
    return c0 * z0 + ct * z_t


def posterior_mean_eps(z_t: np.ndarray, eps_hat: np.ndarray, t: int,
                       sched: NoiseSchedule) -> np.ndarray:
    """Same mean, parameterized by predicted noise instead of z0."""
    b = float(sched.beta[t - 1])
    ab = float(sched.alpha_bar[t - 1])
    return (z_t - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - b)


def apply_guidance(z0_tilde: np.ndarray, f_v: np.ndarray, lam: float) -> np.ndarray:
    """Pull the clean-latent estimate toward f_v by lam/N.

    N is the latent element count per sample; lam is clamped to [0, N]
    so the contraction factor 1 - lam/N stays in [0, 1]. lam = 0 is an
    exact no-op, lam = N lands on f_v.
    """
    n = int(np.prod(z0_tilde.shape[-3:]))
    lam = min(max(float(lam), 0.0), float(n))
    if lam == 0.0:
        return z0_tilde
    return z0_tilde - (lam / n) * (z0_tilde - f_v)


def space_timesteps(T: int, n: int) -> np.ndarray:
    """n strictly increasing steps from 1..T, last exactly T.

    Integer arithmetic (t_k = 1 + (T-1)k // (n-1)) so the grid is exact
    and strictly monotone whenever n <= T.
    """
    if not 1 <= n <= T:
        raise ValueError(f"need 1 <= n <= T, got n={n}, T={T}")
    if n == 1:
        return np.array([T], dtype=np.int64)
    ts = np.array([1 + (T - 1) * k // (n - 1) for k in range(n)], dtype=np.int64)
    assert ts[0] == 1 and ts[-1] == T and np.all(np.diff(ts) > 0)
    return ts


def respace_schedule(sched: NoiseSchedule, steps: np.ndarray) -> NoiseSchedule:
    """Schedule over a sub-grid: beta'_k = 1 - abar_{t_k} / abar_{t_{k-1}}.

    steps == 1..T returns copies of the original arrays so a full-grid
    respace is bit-identical to the source schedule.
    """
    n = len(steps)
    if n == sched.T and steps[0] == 1 and steps[-1] == sched.T:
        return NoiseSchedule(sched.T, sched.beta.copy(), sched.alpha.copy(),
                             sched.alpha_bar.copy(), sched.posterior_var.copy())
    ab = sched.alpha_bar[steps - 1]
    abp = np.concatenate([[1.0], ab[:-1]])
    beta = 1.0 - ab / abp
    alpha = 1.0 - beta
    posterior_var = (1.0 - abp) / (1.0 - ab) * beta
    return NoiseSchedule(n, beta, alpha, ab, posterior_var)


def guided_sample(dn: Denoiser, sched: NoiseSchedule, cond: ConditionSet,
                  lam: float, shape: tuple, rng: np.random.Generator,
                  steps: int | None = None, use_control: bool = True,
                  use_csi: bool = True) -> np.ndarray:
    """Ancestral sampling with intermediate-latent guidance.

    Returns the final latent z_0 (decode separately). Draw order is
    fixed: one [shape] normal for z_T, then one per non-final step, so
    two runs with equal-seeded generators are bit-identical.
    """
    dt = ad.default_dtype()
    tmap = space_timesteps(sched.T, sched.T if steps is None else steps)
    rs = respace_schedule(sched, tmap)
    f_v = cond.f_v.data.astype(dt)
    z = rng.standard_normal(shape).astype(dt)
    with ad.no_grad():
        for k in range(rs.T, 0, -1):
            t_model = int(tmap[k - 1])
            eps = denoise(dn, Tensor(z), t_model, cond,
                          use_control=use_control, use_csi=use_csi).data
            z0t = np.clip(estimate_z0(z, k, eps, rs), -Z0_CLAMP, Z0_CLAMP)
            z0h = apply_guidance(z0t, f_v, lam)
            mu = posterior_mean(z, z0h, k, rs)
            if k > 1:
                noise = rng.standard_normal(shape).astype(dt)
                z = mu + np.sqrt(rs.posterior_var[k - 1]) * noise
            else:
                z = mu
    return z


# ---------------------------------------------------------------------------
# training

def _encode_scaled(codec: LatentCodec, x: np.ndarray, scale: float) -> np.ndarray:
    with ad.no_grad():
        return encode_latent(codec, Tensor(x)).data * float(scale)


def _eps_loss(eps: np.ndarray, eps_hat: Tensor) -> Tensor:
    diff = ad.add(eps_hat, ad.mul_scalar(Tensor(eps), -1.0))
    return ad.tmean(ad.mul(diff, diff))


def pretrain_base(dn: Denoiser, codec: LatentCodec, sched: NoiseSchedule,
                  images: np.ndarray, seed: int, iters: int = 800,
                  batch: int = 16, lr: float = 1e-3,
                  log_every: int = 0) -> list[float]:
    """Stage 1: unconditional-ish denoiser on clean latents.

    Control branch and CSI stay out of the graph; the semantic slot is
    pinned to the constant null token.
    """
    if images.shape[0] == 0:
        raise ValueError("empty training set")
    opt = Adam(dn.base_params(), lr=lr)
    r_batch = stream(seed, "base", "batch")
    r_noise = stream(seed, "base", "noise")
    scale = dn.scale()
    null_row = dn.table.data[null_label_id(dn.table)]
    losses = []
    for it in range(iters):
        idx = r_batch.integers(0, images.shape[0], size=min(batch, images.shape[0]))
        z0 = _encode_scaled(codec, images[idx], scale)
        n = z0.shape[0]
        t = r_noise.integers(1, sched.T + 1, size=n)
        eps = r_noise.standard_normal(z0.shape).astype(z0.dtype)
        z_t = forward_diffuse(z0, t, eps, sched).astype(z0.dtype)
        f_t = Tensor(np.broadcast_to(null_row, (n, 1, null_row.shape[0])).copy())
        cond = ConditionSet(f_v=Tensor(np.zeros_like(z0)), f_t=f_t,
                            h=1.0 + 0.0j, gamma_db=0.0)
        eps_hat = denoise(dn, Tensor(z_t), t, cond,
                          use_control=False, use_csi=False)
        loss = _eps_loss(eps, eps_hat)
        val = loss.item()
        if not np.isfinite(val):
            raise RuntimeError(f"base pretraining loss went non-finite: {val}")
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        losses.append(val)
        if log_every and (it + 1) % log_every == 0:
            print(f"base iter {it + 1}/{iters} loss {val:.5f}")
    return losses


def train_control(dn: Denoiser, codec: LatentCodec, jscc_model,
                  sched: NoiseSchedule, images: np.ndarray, labels: np.ndarray,
                  seed: int, iters: int = 800, batch: int = 16, lr: float = 1e-3,
                  use_csi: bool = True, use_semantic: bool = True,
                  log_every: int = 0) -> list[float]:
    """Stage 2: freeze the base, train the control side on real link runs.

    The control trunk is re-seeded from the now-frozen base encoder, so
    it starts from learned features and only the zero convs must grow.
    Every sample sees a fresh channel draw: encode, fade+noise,
    equalize, decode, then condition on the coarse result.
    """
    from . import jscc as jscc_mod

    if images.shape[0] == 0:
        raise ValueError("empty training set")
    if labels.shape[0] != images.shape[0]:
        raise ValueError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    if not np.any(dn.base.out_conv.w.data):
        # zero output conv blocks every gradient into the control branch
        raise ValueError("base denoiser looks untrained (all-zero output "
                         "conv); pretrain the base before control training")
    for p in dn.base_params():
        p.requires_grad = False
    for p in jscc_model.parameters():
        p.requires_grad = False
    for p in codec.parameters():
        p.requires_grad = False
    dn.control.init_from(dn.base.core, dn.z_channels)
    opt = Adam(dn.control_params(), lr=lr)
    r_batch = stream(seed, "control", "batch")
    r_chan = stream(seed, "control", "channel")
    r_noise = stream(seed, "control", "noise")
    scale = dn.scale()
    null_id = null_label_id(dn.table)
    cfg = jscc_model.cfg
    H, W = images.shape[2], images.shape[3]
    losses = []
    for it in range(iters):
        idx = r_batch.integers(0, images.shape[0], size=min(batch, images.shape[0]))
        x = images[idx]
        n = x.shape[0]
        gamma, h_re, h_im, sigma2 = jscc_mod._draw_channel(cfg, n, r_chan)
        hpair = (h_re[:, None], h_im[:, None])
        with ad.no_grad():
            y = jscc_mod.encode(jscc_model, Tensor(x), gamma, hpair)
            y_hat = ch.transmit_symbols(y, hpair, sigma2[:, None], r_chan)
            y_eq = ch.equalize(y_hat, hpair)
            x_hat = jscc_mod.decode(jscc_model, y_eq, gamma, hpair, (H, W))
            f_v = encode_latent(codec, x_hat).data * float(scale)
        z0 = _encode_scaled(codec, x, scale)
        t = r_noise.integers(1, sched.T + 1, size=n)
        eps = r_noise.standard_normal(z0.shape).astype(z0.dtype)
        z_t = forward_diffuse(z0, t, eps, sched).astype(z0.dtype)
        ids = labels[idx] if use_semantic else np.full(n, null_id, dtype=np.int64)
        f_t = semantic_embedding(dn.table, ids)
        cond = ConditionSet(f_v=Tensor(f_v), f_t=f_t,
                            h=(h_re, h_im), gamma_db=gamma)
        eps_hat = denoise(dn, Tensor(z_t), t, cond,
                          use_control=True, use_csi=use_csi)
        loss = _eps_loss(eps, eps_hat)
        val = loss.item()
        if not np.isfinite(val):
            raise RuntimeError(f"control training loss went non-finite: {val}")
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        losses.append(val)
        if log_every and (it + 1) % log_every == 0:
            print(f"control iter {it + 1}/{iters} loss {val:.5f}")
    return losses
