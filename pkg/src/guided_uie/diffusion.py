"""Noise schedules, forward diffusion and unguided DDPM/DDIM reverse steps.

Schedule arrays are indexed by timestep with a padding entry at index 0, so
``sched.alpha_bar[t]`` reads naturally for t = 1..T and ``alpha_bar[0] == 1``
(the clean-data end of the chain).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol

import numpy as np


class VariancePolicy(enum.Enum):
    FIXED_BETA = "fixed_beta"
    FIXED_POSTERIOR = "fixed_posterior"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        b = np.asarray(betas, dtype=np.float64)
        if b.ndim != 1 or len(b) == 0 or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must be a non-empty 1-D array in (0, 1)")
        beta = np.concatenate([[0.0], b])
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        post = np.zeros_like(beta)
        post[1] = beta[1]
        post[2:] = (1.0 - alpha_bar[1:-1]) / (1.0 - alpha_bar[2:]) * beta[2:]
        for arr in (beta, alpha, alpha_bar, post):
            arr.setflags(write=False)
        return cls(beta, alpha, alpha_bar, post)

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": float(self.beta[1]), "beta_end": float(self.beta[-1])}


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be positive")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))


def timesteps(T: int, steps: int) -> list[int]:
    """Descending, uniformly spaced subsequence of 1..T starting at T."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must be in 1..{T}, got {steps}")
    ts = np.unique(np.round(np.linspace(T, 1, steps)).astype(int))[::-1]
    return [int(t) for t in ts]


class NoisePredictor(Protocol):
    variance_policy: VariancePolicy

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


class GaussianWorldPredictor:
    """Exact noise predictor when the data distribution is N(mean, var * I).

    Under that prior E[x0 | x_t] is affine in x_t, so every sampler built on
    this predictor is an affine-Gaussian recursion with closed-form moments.
    """

    def __init__(self, mean, var: float, sched: NoiseSchedule,
                 variance_policy: VariancePolicy = VariancePolicy.FIXED_POSTERIOR):
        if not var > 0:
            raise ValueError("variance must be positive")
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = float(var)
        self.sched = sched
        self.variance_policy = variance_policy

    def posterior_mean(self, x_t: np.ndarray, t: int) -> np.ndarray:
        ab = self.sched.alpha_bar[t]
        v = self.var
        return (np.sqrt(ab) * v * x_t + (1.0 - ab) * self.mean) / (ab * v + 1.0 - ab)

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        self.sched.check_t(t)
        ab = self.sched.alpha_bar[t]
        return (x_t - np.sqrt(ab) * self.posterior_mean(x_t, t)) / np.sqrt(1.0 - ab)


@dataclass
class ReverseStepDistribution:
    mu: np.ndarray
    sigma2: float
    eps_hat: np.ndarray | None = None


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    sched.check_t(t)
    if np.shape(x0) != np.shape(eps):
        raise ValueError(f"shape mismatch: {np.shape(x0)} vs {np.shape(eps)}")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    sched.check_t(t)
    if np.shape(x_t) != np.shape(eps_hat):
        raise ValueError(f"shape mismatch: {np.shape(x_t)} vs {np.shape(eps_hat)}")
    ab = sched.alpha_bar[t]
    return x_t / np.sqrt(ab) - np.sqrt(1.0 - ab) / np.sqrt(ab) * eps_hat


def step_variance(sched: NoiseSchedule, t: int, t_prev: int, policy: VariancePolicy) -> float:
    """Reverse-step variance for a (possibly strided) jump t -> t_prev."""
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t_prev]
    beta = 1.0 - ab_t / ab_prev
    if policy is VariancePolicy.FIXED_BETA or t_prev == 0:
        return float(beta)
    return float((1.0 - ab_prev) / (1.0 - ab_t) * beta)


def reverse_distribution(x_t: np.ndarray, t: int, predictor: NoisePredictor, sched: NoiseSchedule,
                         t_prev: int | None = None) -> ReverseStepDistribution:
    """Mean and variance of p(x_{t_prev} | x_t); t_prev defaults to t - 1."""
    sched.check_t(t)
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev must satisfy 0 <= t_prev < t, got {t_prev}, {t}")
    eps_hat = np.asarray(predictor.predict(x_t, t))
    if eps_hat.shape != np.shape(x_t):
        raise ValueError(f"predictor returned shape {eps_hat.shape} for input {np.shape(x_t)}")
    ab_t = sched.alpha_bar[t]
    alpha = ab_t / sched.alpha_bar[t_prev]
    beta = 1.0 - alpha
    mu = (x_t - beta / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha)
    sigma2 = step_variance(sched, t, t_prev, predictor.variance_policy)
    return ReverseStepDistribution(mu=mu, sigma2=sigma2, eps_hat=eps_hat)


def ddpm_step(dist: ReverseStepDistribution, rng: np.random.Generator, final: bool = False) -> np.ndarray:
    """Draw from N(mu, sigma2 I); the final step returns the mean."""
    if final or dist.sigma2 == 0:
        return np.array(dist.mu, copy=True)
    return dist.mu + np.sqrt(dist.sigma2) * rng.standard_normal(np.shape(dist.mu))


def ddim_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from t to t_prev."""
    sched.check_t(t)
    if not 0 <= t_prev < t:
        raise ValueError(f"DDIM needs 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t_prev]
    x0 = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat


def sample_ddpm(predictor: NoisePredictor, sched: NoiseSchedule, shape, rng: np.random.Generator,
                steps: int | None = None) -> np.ndarray:
    """Unguided ancestral sampling from x_T ~ N(0, I)."""
    ts = timesteps(sched.T, steps or sched.T)
    x = rng.standard_normal(shape)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        dist = reverse_distribution(x, t, predictor, sched, t_prev)
        x = ddpm_step(dist, rng, final=t_prev == 0)
    return x


def sample_ddim(predictor: NoisePredictor, sched: NoiseSchedule, shape, rng: np.random.Generator,
                steps: int | None = None) -> np.ndarray:
    ts = timesteps(sched.T, steps or sched.T)
    x = rng.standard_normal(shape)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        x = ddim_step(x, predictor.predict(x, t), t, t_prev, sched)
    return x
