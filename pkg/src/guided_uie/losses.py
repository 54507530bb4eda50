"""Guidance loss terms with analytic gradients.

Every term returns ``(value, grad)`` where ``grad`` is the derivative with
respect to the second (candidate) image.  The combined loss is

    total = mae - l1 * msssim + l2 * perceptual - l3 * quality_a - l4 * quality_b

The perceptual term uses a frozen, seeded random convolutional network rather
than a pretrained VGG, and the two quality slots are filled by a hand
differentiable colorfulness / local-contrast score instead of learned
assessors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image_core import gaussian_kernel

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WIN = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2
KAPPA = 1e-3
# floor applied to per-scale contrast-structure before the fractional power
CS_FLOOR = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.005
    lambda3: float = 0.001
    lambda4: float = 1e-5

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    @classmethod
    def mae_only(cls) -> "LossWeights":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class LossReport:
    total: float
    mae: float
    msssim: float
    perceptual: float
    quality_a: float
    quality_b: float


def _check_pair(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def mae(a: np.ndarray, b: np.ndarray):
    _check_pair(a, b)
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.size
    return float(np.abs(d).mean()), -np.sign(d) / n


# ---------------------------------------------------------------- MS-SSIM


def _filt_valid(x, k):
    n = len(k)
    h, w = x.shape[0] - n + 1, x.shape[1] - n + 1
    tmp = sum(k[j] * x[j : j + h] for j in range(n))
    return sum(k[j] * tmp[:, j : j + w] for j in range(n))


def _filt_valid_T(g, k, shape):
    # adjoint of _filt_valid
    n = len(k)
    h, w = g.shape[:2]
    tmp = np.zeros((h, shape[1]) + g.shape[2:])
    for j in range(n):
        tmp[:, j : j + w] += k[j] * g
    out = np.zeros(shape)
    for j in range(n):
        out[j : j + h] += k[j] * tmp
    return out


def _pool(x):
    h, w = x.shape[0] // 2, x.shape[1] // 2
    x = x[: 2 * h, : 2 * w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _pool_T(g, shape):
    out = np.zeros(shape)
    h, w = g.shape[:2]
    q = 0.25 * g
    out[0 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 0 : 2 * w : 2] = q
    out[0 : 2 * h : 2, 1 : 2 * w : 2] = q
    out[1 : 2 * h : 2, 1 : 2 * w : 2] = q
    return out


def n_scales(height: int, width: int, max_scales: int = 5) -> int:
    n = 0
    h, w = height, width
    while n < max_scales and min(h, w) >= SSIM_WIN:
        n += 1
        h, w = h // 2, w // 2
    return n


def _ssim_stats(a, b, k, need_grad):
    """Per-channel mean of cs and l*cs maps plus their map-space partials."""
    mu_a, mu_b = _filt_valid(a, k), _filt_valid(b, k)
    s_aa, s_bb, s_ab = _filt_valid(a * a, k), _filt_valid(b * b, k), _filt_valid(a * b, k)
    va = s_aa - mu_a * mu_a
    vb = s_bb - mu_b * mu_b
    cov = s_ab - mu_a * mu_b
    num_cs = 2 * cov + C2
    den_cs = va + vb + C2
    cs = num_cs / den_cs
    num_l = 2 * mu_a * mu_b + C1
    den_l = mu_a * mu_a + mu_b * mu_b + C1
    lum = num_l / den_l
    cs_mean = cs.mean(axis=(0, 1))
    ssim_mean = (lum * cs).mean(axis=(0, 1))
    if not need_grad:
        return cs_mean, ssim_mean, None, None
    npix = cs.shape[0] * cs.shape[1]
    dcs_sab = 2.0 / den_cs
    dcs_sbb = -num_cs / den_cs**2
    dcs_mub = -2.0 * mu_a / den_cs + 2.0 * mu_b * num_cs / den_cs**2
    dl_mub = 2.0 * mu_a / den_l - 2.0 * mu_b * num_l / den_l**2

    def back(d_mub, d_sbb, d_sab):
        shape = a.shape
        return (
            _filt_valid_T(d_mub / npix, k, shape)
            + 2.0 * b * _filt_valid_T(d_sbb / npix, k, shape)
            + a * _filt_valid_T(d_sab / npix, k, shape)
        )

    grad_cs = lambda: back(dcs_mub, dcs_sbb, dcs_sab)  # noqa: E731
    grad_ssim = lambda: back(dl_mub * cs + lum * dcs_mub, lum * dcs_sbb, lum * dcs_sab)  # noqa: E731
    return cs_mean, ssim_mean, grad_cs, grad_ssim


def ms_ssim(a: np.ndarray, b: np.ndarray, need_grad: bool = True, max_scales: int = 5):
    """Multi-scale SSIM averaged over channels, with gradient w.r.t. ``b``.

    Scales that would shrink below the 11-pixel window are dropped and the
    remaining exponents renormalized.
    """
    _check_pair(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    m = n_scales(a.shape[0], a.shape[1], max_scales)
    if m == 0:
        raise ValueError(f"image {a.shape[:2]} is smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    w = np.asarray(MSSSIM_WEIGHTS[:m])
    w = w / w.sum()
    k = gaussian_kernel(SSIM_SIGMA, SSIM_WIN // 2)

    pyr_a, pyr_b = [a], [b]
    for _ in range(m - 1):
        pyr_a.append(_pool(pyr_a[-1]))
        pyr_b.append(_pool(pyr_b[-1]))

    factors, grads = [], []
    for j in range(m):
        cs_mean, ssim_mean, g_cs, g_ssim = _ssim_stats(pyr_a[j], pyr_b[j], k, need_grad)
        f = ssim_mean if j == m - 1 else cs_mean
        factors.append(f)
        grads.append(g_ssim if j == m - 1 else g_cs)

    clamped = [np.maximum(f, CS_FLOOR) for f in factors]
    per_channel = np.prod([c ** w[j] for j, c in enumerate(clamped)], axis=0)
    value = float(per_channel.mean())
    if not need_grad:
        return value, None

    nc = a.shape[2]
    grad = np.zeros_like(b)
    for j in range(m - 1, -1, -1):
        coef = np.where(factors[j] > CS_FLOOR, per_channel * w[j] / clamped[j], 0.0) / nc
        if np.any(coef):
            gj = grads[j]() * coef
            for i in range(j, 0, -1):
                gj = _pool_T(gj, pyr_b[i - 1].shape)
            grad += gj
    return value, grad


def ssim_value(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale mean SSIM (valid windows), averaged over channels."""
    _check_pair(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"image {a.shape[:2]} is smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    k = gaussian_kernel(SSIM_SIGMA, SSIM_WIN // 2)
    _, ssim_mean, _, _ = _ssim_stats(a, b, k, need_grad=False)
    return float(ssim_mean.mean())


# ---------------------------------------------------------------- perceptual


class FeatureExtractor:
    """Frozen three-stage random conv net: 3->8->16->32 channels, 3x3, stride 2, ReLU."""

    channels = (3, 8, 16, 32)

    def __init__(self, seed: int = 0):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights = []
        for cin, cout in zip(self.channels[:-1], self.channels[1:]):
            fan_in = 9 * cin
            wt = rng.standard_normal((3, 3, cin, cout)) / np.sqrt(fan_in)
            wt.setflags(write=False)
            self.weights.append(wt)

    @staticmethod
    def _patches(x):
        xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        win = sliding_window_view(xp, (3, 3), axis=(0, 1))  # (H, W, C, 3, 3)
        return win[::2, ::2].transpose(0, 1, 3, 4, 2)  # (Ho, Wo, 3, 3, C)

    def forward(self, x: np.ndarray):
        """Return the post-activation maps of every stage and the cache for backprop."""
        h = np.asarray(x, dtype=np.float64) - 0.5
        feats, cache = [], []
        for wt in self.weights:
            p = self._patches(h)
            z = np.tensordot(p, wt, axes=([2, 3, 4], [0, 1, 2]))
            cache.append((h.shape, p.shape, z))
            h = np.maximum(z, 0.0)
            feats.append(h)
        return feats, cache

    def backward(self, grads, cache) -> np.ndarray:
        """Push per-stage feature gradients back to the input image."""
        g = np.zeros_like(grads[-1])
        for stage in range(len(self.weights) - 1, -1, -1):
            g = g + grads[stage]
            in_shape, p_shape, z = cache[stage]
            dz = g * (z > 0)
            dp = np.tensordot(dz, self.weights[stage], axes=([2], [3]))  # (Ho, Wo, 3, 3, C)
            ho, wo = p_shape[:2]
            dxp = np.zeros((in_shape[0] + 2, in_shape[1] + 2, in_shape[2]))
            for ki in range(3):
                for kj in range(3):
                    dxp[ki : ki + 2 * ho : 2, kj : kj + 2 * wo : 2] += dp[:, :, ki, kj]
            g = dxp[1:-1, 1:-1]
        return g


_DEFAULT_FX: FeatureExtractor | None = None


def default_extractor() -> FeatureExtractor:
    global _DEFAULT_FX
    if _DEFAULT_FX is None:
        _DEFAULT_FX = FeatureExtractor(seed=0)
    return _DEFAULT_FX


def perceptual(a: np.ndarray, b: np.ndarray, fx: FeatureExtractor | None = None):
    _check_pair(a, b)
    if np.shape(a)[-1] != 3:
        raise ValueError("perceptual loss needs 3-channel images")
    fx = fx or default_extractor()
    fa, _ = fx.forward(a)
    fb, cache = fx.forward(b)
    value = 0.0
    grads = []
    for ea, eb in zip(fa, fb):
        d = ea - eb
        value += float(np.mean(d * d))
        grads.append(-2.0 * d / d.size)
    return value, fx.backward(grads, cache)


# ---------------------------------------------------------------- quality proxy

COLOR_WEIGHT = 0.5
CONTRAST_WEIGHT = 0.5


def _sabs(u):
    r = np.sqrt(u * u + KAPPA * KAPPA)
    return r - KAPPA, u / r


def quality_terms(x: np.ndarray):
    """Weighted colorfulness and local-contrast sub-scores with their gradients."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError("quality proxy needs a 3-channel image")
    R, G, B = x[..., 0], x[..., 1], x[..., 2]
    rg = R - G
    yb = 0.5 * (R + G) - B
    r = np.sqrt(rg * rg + yb * yb + KAPPA * KAPPA)
    n = rg.size
    color = COLOR_WEIGHT * float((r - KAPPA).mean())
    d_rg = COLOR_WEIGHT * rg / r / n
    d_yb = COLOR_WEIGHT * yb / r / n
    g_color = np.stack([d_rg + 0.5 * d_yb, -d_rg + 0.5 * d_yb, -d_yb], axis=-1)

    lum = x.mean(axis=2)
    dx = lum[:, 1:] - lum[:, :-1]
    dy = lum[1:, :] - lum[:-1, :]
    sx, gx = _sabs(dx)
    sy, gy = _sabs(dy)
    contrast = 0.0
    d_lum = np.zeros_like(lum)
    if dx.size:
        contrast += float(sx.mean())
        gx = gx / dx.size
        d_lum[:, 1:] += gx
        d_lum[:, :-1] -= gx
    if dy.size:
        contrast += float(sy.mean())
        gy = gy / dy.size
        d_lum[1:, :] += gy
        d_lum[:-1, :] -= gy
    contrast *= CONTRAST_WEIGHT
    g_contrast = np.repeat((CONTRAST_WEIGHT * d_lum / 3.0)[:, :, None], 3, axis=2)
    return color, g_color, contrast, g_contrast


def quality_proxy(x: np.ndarray):
    color, g_color, contrast, g_contrast = quality_terms(x)
    return color + contrast, g_color + g_contrast


# ---------------------------------------------------------------- combined


def total_loss(x_hat: np.ndarray, x: np.ndarray, w: LossWeights | None = None,
               fx: FeatureExtractor | None = None):
    """Weighted guidance loss of candidate ``x`` against target ``x_hat``."""
    _check_pair(x_hat, x)
    w = w or LossWeights()
    x = np.asarray(x, dtype=np.float64)
    v_mae, grad = mae(x_hat, x)
    grad = grad.copy()
    v_ms, g_ms = ms_ssim(x_hat, x, need_grad=w.lambda1 > 0)
    if w.lambda1 > 0:
        grad -= w.lambda1 * g_ms
    if x.shape[-1] == 3:
        v_per, g_per = perceptual(x_hat, x, fx)
        qa, g_qa, qb, g_qb = quality_terms(x)
        if w.lambda2 > 0:
            grad += w.lambda2 * g_per
        if w.lambda3 > 0:
            grad -= w.lambda3 * g_qa
        if w.lambda4 > 0:
            grad -= w.lambda4 * g_qb
    elif w.lambda2 or w.lambda3 or w.lambda4:
        raise ValueError("perceptual and quality terms need 3-channel images")
    else:
        v_per = qa = qb = 0.0
    total = v_mae - w.lambda1 * v_ms + w.lambda2 * v_per - w.lambda3 * qa - w.lambda4 * qb
    report = LossReport(total=total, mae=v_mae, msssim=v_ms, perceptual=v_per, quality_a=qa, quality_b=qb)
    return report, grad


# ---------------------------------------------------------------- gradient check


def gradcheck(f: Callable, point: np.ndarray, h: float = 1e-3, n_coords: int = 64,
              seed: int = 0, mask: np.ndarray | None = None) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(x)`` must return ``(value, grad)``; a LossReport value counts by its total.  Coordinates are a deterministic
    random subsample; ``mask`` (boolean, same shape) restricts the candidates.
    """
    if not h > 0:
        raise ValueError("h must be positive")

    def value(v):
        return float(v.total if isinstance(v, LossReport) else v)

    x = np.array(point, dtype=np.float64)
    _, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    candidates = np.flatnonzero(mask.ravel()) if mask is not None else np.arange(x.size)
    rng = np.random.default_rng(seed)
    idx = rng.choice(candidates, size=min(n_coords, len(candidates)), replace=False)
    flat = x.ravel()
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = value(f(x)[0])
        flat[i] = orig - h
        fm = value(f(x)[0])
        flat[i] = orig
        num = (fp - fm) / (2 * h)
        den = max(abs(analytic[i]), abs(num), 1e-8)
        worst = max(worst, abs(analytic[i] - num) / den)
    return worst
