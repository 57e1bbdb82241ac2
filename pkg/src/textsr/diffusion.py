"""Forward diffusion, the reverse DDPM step, training loss, and sampling.

Conventions
-----------
Timesteps are integer indices ``0 <= t < T``.  The forward corruption is

    z_t = sqrt(abar_t) * z_0 + sqrt(1 - abar_t) * eps,   eps ~ N(0, I)

with ``abar_t`` the running product of ``alpha_t = 1 - beta_t``.  The
reverse process uses the standard ancestral DDPM posterior; sampling can
run on a uniform-stride subsequence of the training timesteps (50 steps by
default at inference), in which case the posterior coefficients are formed
from ratios of ``abar`` at consecutive selected timesteps.

A "denoiser" is any callable ``denoiser(z_t, lr_latent, t, priors, f_lr)``
returning the noise estimate.  It may return either a plain ndarray or an
autodiff ``Tensor``; ``training_loss`` hands back the matching type so the
loss stays differentiable for real models and stays convenient for the toy
predictors used in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import sampling_noise


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta/alpha/abar arrays governing the diffusion process."""

    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def validate(self) -> None:
        T = self.num_steps
        if T < 1:
            raise ValueError("num_steps must be >= 1")
        for name, arr in (("betas", self.betas), ("alphas", self.alphas),
                          ("alpha_bars", self.alpha_bars)):
            if arr.shape != (T,):
                raise ValueError(f"{name} must have shape ({T},)")
        if not (np.all(self.betas > 0.0) and np.all(self.betas < 1.0)):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.betas) < 0.0):
            raise ValueError("betas must be non-decreasing")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        if not (0.0 < self.alpha_bars[-1] <= self.alpha_bars[0] < 1.0):
            raise ValueError("alpha_bars must satisfy 0 < abar[T-1] < abar[0] < 1")
        if T > 1 and self.alpha_bars[-1] >= self.alpha_bars[0]:
            raise ValueError("alpha_bars must strictly decrease from abar[0]")
        running = np.cumprod(self.alphas)
        rel = np.abs(self.alpha_bars - running) / np.abs(running)
        if np.max(rel) > 1e-12:
            raise ValueError("alpha_bars inconsistent with cumulative product of alphas")


def make_schedule(num_steps: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with the running alpha product precomputed."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if num_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alphas = 1.0 - betas
    schedule = NoiseSchedule(num_steps=num_steps, betas=betas, alphas=alphas,
                             alpha_bars=np.cumprod(alphas))
    schedule.validate()
    return schedule


def _check_t(t: int, schedule: NoiseSchedule) -> int:
    t = int(t)
    if not 0 <= t < schedule.num_steps:
        raise ValueError(f"timestep {t} out of range [0, {schedule.num_steps})")
    return t


def diffuse_with_alpha_bar(z0, alpha_bar: float, eps):
    """Core corruption formula for a given abar value (limit cases allowed)."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {eps.shape} != z0 shape {z0.shape}")
    return math.sqrt(alpha_bar) * z0 + math.sqrt(1.0 - alpha_bar) * eps


def forward_diffuse(z0, t: int, eps, schedule: NoiseSchedule):
    """Noisy latent z_t from clean z0 and caller-supplied noise eps."""
    t = _check_t(t, schedule)
    return diffuse_with_alpha_bar(z0, float(schedule.alpha_bars[t]), eps)


def training_loss(denoiser, z0, lr_latent, priors, t: int, eps,
                  schedule: NoiseSchedule, f_lr=None):
    """Mean squared noise-prediction error at timestep t.

    Returns an autodiff Tensor when the denoiser builds a graph (call
    ``.backward()`` on it), otherwise a plain float.
    """
    z_t = forward_diffuse(z0, t, eps, schedule)
    pred = denoiser(z_t, lr_latent, t, priors, f_lr)
    if isinstance(pred, Tensor):
        if not np.all(np.isfinite(pred.data)):
            raise FloatingPointError("denoiser produced non-finite output")
        return ad.mse(Tensor(eps), pred)
    pred = np.asarray(pred, dtype=np.float64)
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("denoiser produced non-finite output")
    return float(np.mean((np.asarray(eps, dtype=np.float64) - pred) ** 2))


def ddpm_step_between(z_t, eps_hat, t: int, t_prev, schedule: NoiseSchedule,
                      noise=None, variance: str = "posterior"):
    """One reverse step from timestep t down to t_prev (None means clean).

    ``variance`` selects the injected-noise scale: "posterior" uses the
    exact posterior variance beta_eff * (1-abar_prev) / (1-abar_t), "beta"
    uses beta_eff itself.  The final step (t_prev None) is deterministic.
    """
    t = _check_t(t, schedule)
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != z_t.shape:
        raise ValueError("eps_hat shape must match z_t shape")
    if not (np.all(np.isfinite(z_t)) and np.all(np.isfinite(eps_hat))):
        raise ValueError("non-finite inputs to ddpm step")
    if variance not in ("posterior", "beta"):
        raise ValueError("variance must be 'posterior' or 'beta'")

    abar_t = float(schedule.alpha_bars[t])
    if t_prev is None:
        abar_prev = 1.0
    else:
        t_prev = _check_t(t_prev, schedule)
        if t_prev >= t:
            raise ValueError("t_prev must be smaller than t")
        abar_prev = float(schedule.alpha_bars[t_prev])

    alpha_eff = abar_t / abar_prev
    beta_eff = 1.0 - alpha_eff
    mean = (z_t - beta_eff / math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(alpha_eff)
    if t_prev is None:
        if noise is not None and np.any(np.asarray(noise) != 0.0):
            raise ValueError("the final step must inject zero noise")
        return mean
    if noise is None:
        return mean
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != z_t.shape:
        raise ValueError("noise shape must match z_t shape")
    if variance == "posterior":
        var = beta_eff * (1.0 - abar_prev) / (1.0 - abar_t)
    else:
        var = beta_eff
    return mean + math.sqrt(var) * noise


def ddpm_step(z_t, eps_hat, t: int, schedule: NoiseSchedule, noise=None,
              variance: str = "posterior"):
    """Adjacent-timestep reverse step: t -> t-1 (t=0 yields the clean estimate)."""
    t = _check_t(t, schedule)
    t_prev = t - 1 if t > 0 else None
    return ddpm_step_between(z_t, eps_hat, t, t_prev, schedule, noise=noise,
                             variance=variance)


def sampling_timesteps(num_train_steps: int, num_sampling_steps: int) -> list[int]:
    """Descending uniform-stride subsequence of [0, T) ending at 0."""
    if not 1 <= num_sampling_steps <= num_train_steps:
        raise ValueError("num_sampling_steps must be in [1, num_train_steps]")
    ts = np.round(np.linspace(0, num_train_steps - 1, num_sampling_steps)).astype(int)
    ts = sorted(set(int(t) for t in ts), reverse=True)
    return ts


def sample(denoiser, lr_latent, priors, schedule: NoiseSchedule, *,
           guidance=None, neg_priors=None, f_lr=None, seed: int = 0,
           num_steps=None, variance: str = "posterior"):
    """Full reverse loop from pure noise to the final clean-latent estimate.

    Deterministic for fixed (parameters, inputs, seed): the initial latent
    and every injected noise are drawn from counter-based streams keyed by
    (seed, timestep).  When a guidance spec is given, the per-step noise
    estimate is the guided combination from :mod:`textsr.guidance`.
    """
    from .guidance import guided_noise  # local import to avoid a cycle

    lr_latent = np.asarray(lr_latent, dtype=np.float64)
    T = schedule.num_steps
    steps = sampling_timesteps(T, num_steps if num_steps is not None else T)
    z = sampling_noise(seed, T, lr_latent.shape)
    with ad.no_grad():
        for i, t in enumerate(steps):
            t_prev = steps[i + 1] if i + 1 < len(steps) else None
            eps_hat = guided_noise(denoiser, z, lr_latent, t, priors, guidance,
                                   neg=neg_priors, f_lr=f_lr)
            noise = sampling_noise(seed, t, z.shape) if t_prev is not None else None
            z = ddpm_step_between(z, eps_hat, t, t_prev, schedule, noise=noise,
                                  variance=variance)
    return z
