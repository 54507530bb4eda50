"""Full-reference (PSNR, SSIM) and no-reference (UCIQE, UIQM) image quality metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .image_core import rgb_to_lab
from .losses import ssim_value

# UCIQE: chroma std, luminance contrast, mean saturation
UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
# UIQM: UICM, UISM, UIConM
UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_TRIM = (0.1, 0.1)
UISM_CHANNEL_WEIGHTS = (0.299, 0.587, 0.114)
UIQM_BLOCK = 8
PLIP_GAMMA = 1026.0
LOG_EPS = 1e-7

PSNR_IDENTICAL = math.inf


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    return ssim_value(a, b)


def _check_rgb(img):
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("metric needs a 3-channel image")


def uciqe(img: np.ndarray) -> float:
    _check_rgb(img)
    lab = rgb_to_lab(img)
    L = lab[..., 0] / 100.0
    chroma = np.hypot(lab[..., 1], lab[..., 2]) / 100.0
    sigma_c = float(chroma.std())
    lo, hi = np.percentile(L, [1, 99])
    con_l = float(hi - lo)
    denom = np.sqrt(chroma**2 + L**2)
    sat = np.divide(chroma, denom, out=np.zeros_like(chroma), where=denom > 0)
    c1, c2, c3 = UCIQE_COEFFS
    return c1 * sigma_c + c2 * con_l + c3 * float(sat.mean())


def _trimmed_stats(v: np.ndarray):
    """Asymmetric alpha-trimmed mean; variance about it over all samples."""
    s = np.sort(v.ravel())
    k = s.size
    lo = int(math.ceil(UICM_TRIM[0] * k))
    hi = int(math.floor(UICM_TRIM[1] * k))
    kept = s[lo : k - hi]
    mu = float(kept.mean())
    var = float(np.mean((s - mu) ** 2))
    return mu, var


def uicm(img: np.ndarray) -> float:
    R, G, B = (img[..., c].astype(np.float64) for c in range(3))
    mu_rg, var_rg = _trimmed_stats(R - G)
    mu_yb, var_yb = _trimmed_stats(0.5 * (R + G) - B)
    return -0.0268 * math.sqrt(mu_rg**2 + mu_yb**2) + 0.1586 * math.sqrt(var_rg + var_yb)


def _blocks(ch: np.ndarray, size: int = UIQM_BLOCK):
    """Full size x size tiles as an (nblocks, size*size) array; partial edge blocks dropped."""
    h, w = ch.shape
    by, bx = h // size, w // size
    if by == 0 or bx == 0:
        raise ValueError(f"image {ch.shape} is smaller than one {size}x{size} block")
    t = ch[: by * size, : bx * size].reshape(by, size, bx, size).swapaxes(1, 2)
    return t.reshape(by * bx, size * size)


def _eme(ch: np.ndarray) -> float:
    b = _blocks(ch)
    mx, mn = b.max(axis=1), b.min(axis=1)
    return float(2.0 / len(b) * np.sum(np.log((mx + LOG_EPS) / (mn + LOG_EPS))))


def sobel_magnitude(ch: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(ch, axis=1, mode="nearest")
    gy = ndimage.sobel(ch, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def uism(img: np.ndarray) -> float:
    x = img.astype(np.float64) * 255.0
    return sum(wc * _eme(sobel_magnitude(x[..., c])) for c, wc in enumerate(UISM_CHANNEL_WEIGHTS))


def plip_add(a, b, gamma=PLIP_GAMMA):
    return a + b - a * b / gamma


def plip_sub(a, b, gamma=PLIP_GAMMA):
    return gamma * (a - b) / (gamma - b)


def plip_scalar_mul(c, a, gamma=PLIP_GAMMA):
    return gamma - gamma * (1.0 - a / gamma) ** c


def uiconm(img: np.ndarray) -> float:
    """Block logAMEE of the luma channel on the 0..255 scale."""
    x = img.astype(np.float64) * 255.0
    gray = UISM_CHANNEL_WEIGHTS[0] * x[..., 0] + UISM_CHANNEL_WEIGHTS[1] * x[..., 1] + UISM_CHANNEL_WEIGHTS[2] * x[..., 2]
    b = _blocks(gray)
    mx, mn = b.max(axis=1), b.min(axis=1)
    top = plip_sub(mx, mn)
    bottom = plip_add(mx, mn)
    ratio = np.divide(top, bottom, out=np.zeros_like(top), where=bottom > 0)
    s = float(np.sum(ratio * np.log(ratio + LOG_EPS)))
    return float(plip_scalar_mul(1.0 / len(b), s))


def uiqm(img: np.ndarray) -> float:
    _check_rgb(img)
    c1, c2, c3 = UIQM_COEFFS
    return c1 * uicm(img) + c2 * uism(img) + c3 * uiconm(img)


@dataclass
class MetricRow:
    image: str
    uciqe: float
    uiqm: float
    psnr: float | None = None
    ssim: float | None = None
    input_uciqe: float | None = None
    input_uiqm: float | None = None
    status: str = "ok"


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    with_reference: bool = False

    def columns(self) -> list[str]:
        cols = ["image"]
        if self.with_reference:
            cols += ["psnr", "ssim"]
        return cols + ["uciqe", "uiqm", "input_uciqe", "input_uiqm", "status"]

    def aggregate(self) -> dict:
        ok = [r for r in self.rows if r.status == "ok"]
        out = {}
        for col in self.columns()[1:-1]:
            vals = [getattr(r, col) for r in ok if getattr(r, col) is not None]
            out[col] = float(np.mean(vals)) if vals else None
        return out

    def write_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in self.rows:
                writer.writerow([_fmt(getattr(r, c)) for c in cols])
            if self.rows:
                agg = self.aggregate()
                writer.writerow(["mean"] + [_fmt(agg[c]) for c in cols[1:-1]] + [f"{sum(r.status == 'ok' for r in self.rows)}/{len(self.rows)}"])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6f}"
    return str(v)
