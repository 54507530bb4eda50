"""Loss-guided DDPM/DDIM sampling for image enhancement.

Four guidance variants are supported, chosen by where the matching loss is
evaluated (on the current sample x_t or on the one-shot clean estimate x0)
and in which domain it is measured (against a pseudo-label in the natural
domain, or against the observed image after re-degrading the candidate with
the formation model).

Losses are always computed on display-mapped images, (x + 1) / 2, without
clamping; the factor 1/2 from that map is part of every returned gradient.
For x0-variants the Jacobian of x0 with respect to x_t is not applied: the
gradient w.r.t. x0 shifts the mean directly and the scale absorbs the rest.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .degradation import DegradationParams, compose, refine_transmission
from .diffusion import (
    NoisePredictor,
    NoiseSchedule,
    ReverseStepDistribution,
    ddim_step,
    ddpm_step,
    predict_x0,
    reverse_distribution,
    timesteps,
)
from .image_core import check_display, from_latent
from .losses import FeatureExtractor, LossReport, LossWeights, total_loss

DIVERGENCE_LIMIT = 1e3


class Variant(enum.Enum):
    X0_NATURAL = "x0-natural"
    XT_NATURAL = "xt-natural"
    X0_UNDERWATER = "x0-underwater"
    XT_UNDERWATER = "xt-underwater"

    @property
    def on_x0(self) -> bool:
        return self in (Variant.X0_NATURAL, Variant.X0_UNDERWATER)

    @property
    def underwater(self) -> bool:
        return self in (Variant.X0_UNDERWATER, Variant.XT_UNDERWATER)


class Sampler(enum.Enum):
    DDPM = "ddpm"
    DDIM = "ddim"


class SamplingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    variant: Variant = Variant.X0_NATURAL
    scale: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    tlr: float = 0.0
    sampler: Sampler = Sampler.DDPM
    steps: int = 1000
    seed: int = 0
    # evaluate guidance at the step mean instead of x_t (the classifier-guidance form)
    grad_at_mean: bool = False
    # shift by s * Sigma * g instead of s * g
    shift_with_variance: bool = False
    snapshot_stride: int = 0

    def validate(self, sched: NoiseSchedule) -> None:
        if self.scale < 0:
            raise ValueError("gradient scale must be non-negative")
        if self.tlr < 0:
            raise ValueError("transmission learning rate must be non-negative")
        if self.tlr != 0 and not self.variant.underwater:
            raise ValueError(f"a transmission learning rate only applies to underwater variants, not {self.variant.value}")
        if not 1 <= self.steps <= sched.T:
            raise ValueError(f"steps must be in 1..{sched.T}, got {self.steps}")


@dataclass
class EnhanceRequest:
    y: np.ndarray
    x_hat: np.ndarray | None = None
    degradation: DegradationParams | None = None

    def check(self, variant: Variant) -> None:
        check_display(self.y, "input image")
        if variant.underwater:
            if self.degradation is None:
                raise ValueError(f"{variant.value} guidance needs degradation parameters")
        elif self.x_hat is None:
            raise ValueError(f"{variant.value} guidance needs a pseudo-label")
        if self.x_hat is not None:
            check_display(self.x_hat, "pseudo-label")
            if self.x_hat.shape != self.y.shape:
                raise ValueError(f"pseudo-label shape {self.x_hat.shape} != input {self.y.shape}")


@dataclass
class StepRecord:
    step: int
    t: int
    loss: float
    grad_norm: float
    terms: LossReport | None = None
    t_clamped: bool = False
    snapshot: np.ndarray | None = None


@dataclass
class SampleTrace:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path) -> None:
        cols = ["step", "t", "loss", "grad_norm", "mae", "msssim", "perceptual", "quality_a", "quality_b", "t_clamped"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                terms = r.terms
                parts = [terms.mae, terms.msssim, terms.perceptual, terms.quality_a, terms.quality_b] if terms else [""] * 5
                w.writerow([r.step, r.t, f"{r.loss:.9g}", f"{r.grad_norm:.9g}"]
                           + [p if p == "" else f"{p:.9g}" for p in parts] + [int(r.t_clamped)])

    def snapshots(self):
        return [(r.step, r.t, r.snapshot) for r in self.records if r.snapshot is not None]


# ---------------------------------------------------------------- matching


def _display(x):
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


class NaturalMatcher:
    """Loss between the display-mapped candidate and a pseudo-label."""

    def __init__(self, x_hat, weights: LossWeights, fx: FeatureExtractor | None = None):
        self.x_hat = np.asarray(x_hat, dtype=np.float64)
        self.weights = weights
        self.fx = fx
        self.last_clamped = False

    def __call__(self, x):
        report, grad = total_loss(self.x_hat, _display(x), self.weights, self.fx)
        return report, 0.5 * grad


def similarity_weights(weights: LossWeights) -> LossWeights:
    return replace(weights, lambda3=0.0, lambda4=0.0)


class UnderwaterMatcher:
    """Re-degrade the candidate and compare with the observation; refines T in place.

    Both gradients are taken at the same re-degraded image (the transmission
    before this step's update).  The refined map persists across steps.
    """

    def __init__(self, y, params: DegradationParams, weights: LossWeights, lr: float = 0.0,
                 fx: FeatureExtractor | None = None):
        self.y = np.asarray(y, dtype=np.float64)
        self.params = params.copy()
        self.weights = similarity_weights(weights)
        self.lr = lr
        self.fx = fx
        self.last_clamped = False

    def evaluate(self, x):
        return match_loss_underwater(self.y, x, self.params, self.weights, self.fx, report=True)

    def __call__(self, x):
        report, grad_x, grad_T = self.evaluate(x)
        self.last_clamped = False
        if self.lr > 0:
            self.params.T, self.last_clamped = refine_transmission(self.params.T, grad_T, self.lr)
        return report, grad_x


def match_loss_natural(x_hat, x, weights: LossWeights, fx: FeatureExtractor | None = None):
    """Guidance loss of a latent candidate against a display pseudo-label; grad w.r.t. the latent."""
    if x_hat is None:
        raise ValueError("natural-domain matching needs a pseudo-label")
    if np.shape(x_hat) != np.shape(x):
        raise ValueError(f"shape mismatch: {np.shape(x_hat)} vs {np.shape(x)}")
    report, grad = NaturalMatcher(x_hat, weights, fx)(x)
    return report.total, grad


def match_loss_underwater(y, x, params: DegradationParams, weights: LossWeights,
                          fx: FeatureExtractor | None = None, report: bool = False):
    """Similarity of y with the re-degraded latent candidate; gradients w.r.t. x and T."""
    if params is None:
        raise ValueError("underwater-domain matching needs degradation parameters")
    disp = _display(x)
    y_hat = compose(disp, params)
    rep, g = total_loss(y, y_hat, similarity_weights(weights), fx)
    grad_x = 0.5 * g * params.T
    grad_T = np.sum(g * (disp - params.A), axis=2, keepdims=True)
    return (rep if report else rep.total), grad_x, grad_T


def mean_shift(mu: np.ndarray, g: np.ndarray, s: float) -> np.ndarray:
    return mu + s * g


# ---------------------------------------------------------------- samplers


def build_matcher(req: EnhanceRequest, cfg: GuidanceConfig, fx: FeatureExtractor | None = None):
    if cfg.variant.underwater:
        return UnderwaterMatcher(req.y, req.degradation, cfg.weights, cfg.tlr, fx)
    return NaturalMatcher(req.x_hat, cfg.weights, fx)


def _guidance(x, t, eps_hat, point, cfg, predictor, sched, matcher):
    """Return (g, x0_estimate_at_x_t, loss, terms, clamped) for one step."""
    x0 = predict_x0(x, eps_hat, t, sched)
    if cfg.variant.on_x0:
        if point is x:
            target = x0
        else:
            target = predict_x0(point, predictor.predict(point, t), t, sched)
    else:
        target = point
    out, grad = matcher(target)
    if isinstance(out, LossReport):
        loss, terms = out.total, out
    else:
        loss, terms = float(out), None
    clamped = bool(getattr(matcher, "last_clamped", False))
    return -np.asarray(grad, dtype=np.float64), x0, loss, terms, clamped


def guided_step_distribution(x, t, t_prev, cfg: GuidanceConfig, predictor: NoisePredictor,
                             sched: NoiseSchedule, matcher: Callable):
    """Mean-shifted reverse distribution for one DDPM step, plus the guidance bookkeeping."""
    dist = reverse_distribution(x, t, predictor, sched, t_prev)
    point = dist.mu if cfg.grad_at_mean else x
    g, x0, loss, terms, clamped = _guidance(x, t, dist.eps_hat, point, cfg, predictor, sched, matcher)
    if cfg.shift_with_variance:
        mean = mean_shift(dist.mu, dist.sigma2 * g, cfg.scale)
    else:
        mean = mean_shift(dist.mu, g, cfg.scale)
    shifted = ReverseStepDistribution(mu=mean, sigma2=dist.sigma2, eps_hat=dist.eps_hat)
    return shifted, (g, x0, loss, terms, clamped)


def _record(trace, cfg, step, t, info):
    g, x0, loss, terms, clamped = info
    snap = None
    if cfg.snapshot_stride and step % cfg.snapshot_stride == 0:
        snap = from_latent(x0).astype(np.float32)
    trace.records.append(StepRecord(step=step, t=t, loss=loss, grad_norm=float(np.linalg.norm(g)),
                                    terms=terms, t_clamped=clamped, snapshot=snap))


def _guard(x, t, info):
    peak = float(np.max(np.abs(x)))
    if not math.isfinite(peak) or peak > DIVERGENCE_LIMIT:
        raise SamplingDivergence(
            f"sample diverged at t={t}: max |x| = {peak:.3g}, guidance grad norm = {np.linalg.norm(info[0]):.3g}"
        )


def guided_ddpm_enhance(req: EnhanceRequest, cfg: GuidanceConfig, predictor: NoisePredictor,
                        sched: NoiseSchedule, matcher: Callable | None = None,
                        fx: FeatureExtractor | None = None, latent: bool = False):
    """Ancestral sampling with the mean shifted by s * g at every step.

    ``matcher`` overrides the loss built from the request: any callable
    mapping a latent image to ``(loss or LossReport, grad)``.  With
    ``latent=True`` the raw final sample is returned instead of the display image.
    """
    cfg.validate(sched)
    if matcher is None:
        req.check(cfg.variant)
        matcher = build_matcher(req, cfg, fx)
    rng = np.random.default_rng(cfg.seed)
    ts = timesteps(sched.T, cfg.steps)
    x = rng.standard_normal(req.y.shape)
    trace = SampleTrace()
    for step, t in enumerate(ts):
        t_prev = ts[step + 1] if step + 1 < len(ts) else 0
        dist, info = guided_step_distribution(x, t, t_prev, cfg, predictor, sched, matcher)
        x = ddpm_step(dist, rng, final=t_prev == 0)
        _record(trace, cfg, step, t, info)
        _guard(x, t, info)
    return (x if latent else from_latent(x)), trace


def guided_ddim_enhance(req: EnhanceRequest, cfg: GuidanceConfig, predictor: NoisePredictor,
                        sched: NoiseSchedule, matcher: Callable | None = None,
                        fx: FeatureExtractor | None = None, latent: bool = False):
    """Deterministic DDIM where guidance enters through the noise estimate."""
    cfg.validate(sched)
    if matcher is None:
        req.check(cfg.variant)
        matcher = build_matcher(req, cfg, fx)
    rng = np.random.default_rng(cfg.seed)
    ts = timesteps(sched.T, cfg.steps)
    x = rng.standard_normal(req.y.shape)
    trace = SampleTrace()
    for step, t in enumerate(ts):
        t_prev = ts[step + 1] if step + 1 < len(ts) else 0
        eps = np.asarray(predictor.predict(x, t))
        info = _guidance(x, t, eps, x, cfg, predictor, sched, matcher)
        eps_adj = eps - np.sqrt(1.0 - sched.alpha_bar[t]) * cfg.scale * info[0]
        x = ddim_step(x, eps_adj, t, t_prev, sched)
        _record(trace, cfg, step, t, info)
        _guard(x, t, info)
    return (x if latent else from_latent(x)), trace


def enhance(req: EnhanceRequest, cfg: GuidanceConfig, predictor: NoisePredictor, sched: NoiseSchedule,
            matcher: Callable | None = None, fx: FeatureExtractor | None = None):
    fn = guided_ddim_enhance if cfg.sampler is Sampler.DDIM else guided_ddpm_enhance
    return fn(req, cfg, predictor, sched, matcher=matcher, fx=fx)
