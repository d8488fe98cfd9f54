"""Forward/reverse denoising diffusion with a fixed noise schedule.

Timesteps are 1-indexed: t runs over 1..T and array index t-1 holds the
per-step quantities. The forward process draws

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,   abar_t = prod(1 - beta_i)

and the reverse (ancestral) step is

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t)
              + sqrt(sigma2_t) * noise

with sigma2_t = beta_t except sigma2_1 = 0, so the final step is
deterministic. Coefficients are computed as python floats so every
operation here works unchanged on numpy arrays and on autograd tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError, SingularityError


@dataclass
class NoiseSchedule:
    num_steps: int
    betas: np.ndarray        # length T, float64
    alphas_cum: np.ndarray   # abar_t at index t-1
    sigma2: np.ndarray       # beta_t at index t-1, except sigma2[0] = 0

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alphas_cum[t - 1])


def make_schedule(T: int, beta_start: float, beta_end: float, kind: str = "linear") -> NoiseSchedule:
    if kind != "linear":
        raise ParameterError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise ParameterError(f"need T >= 1, got {T}")
    if not (0.0 <= beta_start <= beta_end < 1.0):
        raise ParameterError(f"need 0 <= beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas_cum = np.cumprod(1.0 - betas)
    sigma2 = betas.copy()
    sigma2[0] = 0.0
    return NoiseSchedule(num_steps=T, betas=betas, alphas_cum=alphas_cum, sigma2=sigma2)


def default_schedule(T: int = 1000) -> NoiseSchedule:
    return make_schedule(T, 1e-4, 0.02)


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not 1 <= t <= sched.num_steps:
        raise ParameterError(f"t={t} outside 1..{sched.num_steps}")


def q_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Noise x0 to timestep t: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    _check_t(t, sched)
    if tuple(x0.shape) != tuple(eps.shape):
        raise ShapeError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    abar = sched.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def predict_x0(xt, t: int, eps_pred, sched: NoiseSchedule):
    """Invert q_sample given the noise estimate."""
    _check_t(t, sched)
    abar = sched.alpha_bar(t)
    if abar == 0.0:
        raise SingularityError(f"alphas_cum[{t}] = 0; x0 is unrecoverable")
    return (xt - math.sqrt(1.0 - abar) * eps_pred) / math.sqrt(abar)


def posterior_step(xt, t: int, eps_pred, sched: NoiseSchedule, noise):
    """One reverse step t -> t-1. Deterministic at t=1 (sigma2[1]=0)."""
    _check_t(t, sched)
    if tuple(noise.shape) != tuple(xt.shape):
        raise ShapeError(f"noise shape {tuple(noise.shape)} != xt shape {tuple(xt.shape)}")
    beta = sched.beta(t)
    if beta == 0.0:
        return xt + 0.0
    abar = sched.alpha_bar(t)
    if 1.0 - abar == 0.0:
        raise SingularityError(f"1 - alphas_cum[{t}] = 0 with betas[{t}] > 0")
    mu = (xt - beta / math.sqrt(1.0 - abar) * eps_pred) / math.sqrt(1.0 - beta)
    s2 = float(sched.sigma2[t - 1])
    if s2 > 0.0:
        mu = mu + math.sqrt(s2) * noise
    return mu


def training_loss(denoiser, x0, cond, t: int, eps, sched: NoiseSchedule):
    """MSE between eps and the denoiser's prediction at q_sample(x0, t, eps)."""
    xt = q_sample(x0, t, eps, sched)
    pred = denoiser(xt, t, cond)
    diff = pred - eps
    return (diff * diff).mean()


def sample_timesteps(T: int, stride: int = 1) -> list[int]:
    """Descending timesteps T..1; stride > 1 keeps every stride-th, always ending at 1."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    ts = list(range(T, 0, -stride))
    if ts[-1] != 1:
        ts.append(1)
    return ts


def sample_loop(denoiser, shape, cond, sched: NoiseSchedule, seed: int,
                stride: int = 1, dtype=np.float64):
    """Ancestral sampling from pure noise down to x0.

    x_T is the first standard-normal draw of np.random.default_rng(seed);
    per-step noises follow from the same generator, so the whole loop is
    bit-deterministic. With stride > 1 the loop visits every stride-th
    timestep and uses the effective beta 1 - abar(t)/abar(t_next) for the
    skipped span, which reduces to betas[t] when t_next == t - 1.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape).astype(dtype, copy=False)
    ts = sample_timesteps(sched.num_steps, stride)
    for i, t in enumerate(ts):
        eps_hat = denoiser(x, t, cond)
        t_next = ts[i + 1] if i + 1 < len(ts) else 0
        if t_next == t - 1:
            noise = rng.standard_normal(shape).astype(dtype, copy=False)
            x = posterior_step(x, t, eps_hat, sched, noise)
            continue
        abar = sched.alpha_bar(t)
        abar_next = sched.alpha_bar(t_next) if t_next >= 1 else 1.0
        beta_eff = 1.0 - abar / abar_next
        if beta_eff == 0.0:
            continue
        if 1.0 - abar == 0.0:
            raise SingularityError(f"1 - alphas_cum[{t}] = 0 during sampling")
        x = (x - beta_eff / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(1.0 - beta_eff)
        if t_next >= 1:
            noise = rng.standard_normal(shape).astype(dtype, copy=False)
            x = x + math.sqrt(beta_eff) * noise
    return x
