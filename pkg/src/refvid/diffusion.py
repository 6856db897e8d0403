"""Noise schedules, forward diffusion, and the deterministic DDIM sampler.

All diffusion networks in the pipeline (the three cascade stages and the
temporal-SR refiner) share this machinery: epsilon-prediction training
targets and eta=0 DDIM reverse steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import Tensor

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha/alpha-bar tables; alpha_bars is strictly decreasing."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """alpha-bar at step t; t = -1 is the clean-data boundary (1.0)."""
        if t == -1:
            return 1.0
        return float(self.alpha_bars[t])


@dataclass(frozen=True)
class SamplerConfig:
    num_inference_steps: int = 10
    eta: float = 0.0
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.num_inference_steps < 1:
            raise ContractError("num_inference_steps must be >= 1")
        if self.eta < 0:
            raise ContractError("eta must be >= 0")
        if self.guidance_scale < 1:
            raise ContractError("guidance_scale must be >= 1")


def make_schedule(kind: str, T: int, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Build a linear or cosine noise schedule of T steps.

    The cosine variant follows the squared-cosine alpha-bar curve with
    offset 0.008 and a 0.999 beta ceiling; beta_start/beta_end only shape
    the linear schedule.
    """
    if T < 2:
        raise ContractError(f"schedule needs T >= 2, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ContractError(
            f"beta range must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        t = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((t + s) / (1 + s) * np.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    else:
        raise ContractError(f"unknown schedule kind '{kind}' (expected linear or cosine)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if not np.all((betas > 0) & (betas < 1)):
        raise ContractError("betas left the open interval (0, 1)")
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def q_sample(x0: Tensor, t: int, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Forward-diffuse x0 to step t: sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    if not 0 <= t < sched.steps:
        raise ContractError(f"timestep {t} out of range [0, {sched.steps})")
    if x0.shape != eps.shape:
        raise ShapeError("q_sample", f"eps shape {eps.shape} != x0 shape {x0.shape}")
    ab = sched.alpha_bar(t)
    return x0 * float(np.sqrt(ab)) + eps * float(np.sqrt(1.0 - ab))


def ddim_step(x_t: Tensor, eps_pred: Tensor, t: int, t_prev: int,
              sched: NoiseSchedule, eta: float = 0.0,
              noise: Tensor | None = None) -> Tensor:
    """One DDIM reverse step from t to t_prev (t_prev = -1 lands on x0)."""
    if t_prev >= t:
        raise ContractError(f"t_prev ({t_prev}) must be < t ({t})")
    if t_prev < -1:
        raise ContractError(f"t_prev ({t_prev}) below the clean-data boundary -1")
    if x_t.shape != eps_pred.shape:
        raise ShapeError("ddim_step", f"eps shape {eps_pred.shape} != x_t shape {x_t.shape}")
    ab_t = sched.alpha_bar(t)
    ab_p = sched.alpha_bar(t_prev)
    x0_hat = (x_t - eps_pred * float(np.sqrt(1.0 - ab_t))) * float(1.0 / np.sqrt(ab_t))
    if eta == 0.0:
        return x0_hat * float(np.sqrt(ab_p)) + eps_pred * float(np.sqrt(1.0 - ab_p))
    sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p)
    if noise is None:
        raise ContractError("eta > 0 requires a noise tensor")
    dir_xt = eps_pred * float(np.sqrt(max(1.0 - ab_p - sigma**2, 0.0)))
    return x0_hat * float(np.sqrt(ab_p)) + dir_xt + noise * float(sigma)


def inference_timesteps(sched: NoiseSchedule, num_steps: int) -> list[int]:
    """Evenly spaced descending timesteps from T-1, ending at the -1 boundary."""
    if num_steps > sched.steps:
        raise ContractError(
            f"num_inference_steps ({num_steps}) exceeds schedule length ({sched.steps})")
    if num_steps == 1:
        ts = [sched.steps - 1]
    else:
        ts = np.round(np.linspace(sched.steps - 1, 0, num_steps)).astype(int).tolist()
    return ts + [-1]


def sample_loop(model, shape: tuple[int, ...], cond, sched: NoiseSchedule,
                sampler: SamplerConfig, seed: int, uncond=None) -> Tensor:
    """Run the deterministic reverse chain from seeded Gaussian noise.

    `model(x_t, t, cond)` must return an epsilon prediction of the same
    shape. With guidance_scale > 1 and an `uncond` condition set, the
    prediction is the classifier-free extrapolation between the two calls.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    x = Tensor(rng.standard_normal(shape, dtype=np.float32))
    ts = inference_timesteps(sched, sampler.num_inference_steps)
    use_guidance = sampler.guidance_scale != 1.0 and uncond is not None
    for t, t_prev in zip(ts[:-1], ts[1:]):
        eps = model(x, t, cond)
        if eps.shape != x.shape:
            raise ShapeError("sample_loop", f"model returned {eps.shape}, expected {x.shape}")
        if use_guidance:
            eps_u = model(x, t, uncond)
            eps = eps_u + (eps - eps_u) * float(sampler.guidance_scale)
        noise = None
        if sampler.eta > 0:
            noise = Tensor(rng.standard_normal(shape, dtype=np.float32))
        x = ddim_step(x, eps, t, t_prev, sched, eta=sampler.eta, noise=noise)
    return x


def epsilon_mse(pred: Tensor, eps: Tensor) -> Tensor:
    """Mean squared error between predicted and true noise (training loss)."""
    d = pred - eps
    return (d * d).mean()
