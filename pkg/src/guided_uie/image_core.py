"""Pixel containers, color conversion and spatial filters.

Images are plain numpy arrays of shape (H, W, C) with C in {1, 3}.  Display
images live in [0, 1]; latent images (the diffusion workspace) are nominally
in [-1, 1] but may leave that range while sampling.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy import ndimage


class Domain(enum.Enum):
    DISPLAY01 = "display01"
    LATENT_SIGNED = "latent_signed"


class DomainError(ValueError):
    """Raised when an image is handed to an operation in the wrong value domain."""


def as_image(arr, dtype=np.float32) -> np.ndarray:
    """Coerce an array to (H, W, C) layout; 2-D input gains a channel axis."""
    img = np.asarray(arr, dtype=dtype)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must have positive height and width")
    return img


def check_display(img: np.ndarray, name: str = "image") -> None:
    if img.size and (np.nanmin(img) < 0.0 or np.nanmax(img) > 1.0 or np.isnan(img).any()):
        raise DomainError(f"{name} is not a display image: samples must lie in [0, 1]")


def to_latent(img: np.ndarray) -> np.ndarray:
    check_display(img)
    # float64 keeps the round trip through from_latent exact for 8-bit data
    return 2.0 * np.asarray(img, dtype=np.float64) - 1.0


def from_latent(img: np.ndarray) -> np.ndarray:
    return np.clip((img + 1.0) / 2.0, 0.0, 1.0)


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalized 1-D Gaussian taps; radius defaults to ceil(3 sigma)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge borders, channels independent."""
    k = gaussian_kernel(sigma)
    work = np.asarray(img, dtype=np.float64)
    work = ndimage.correlate1d(work, k, axis=0, mode="nearest")
    work = ndimage.correlate1d(work, k, axis=1, mode="nearest")
    return work.astype(np.result_type(img.dtype, np.float32), copy=False)


def min_filter(img: np.ndarray, radius: int) -> np.ndarray:
    """Minimum over the clamped (2r+1)^2 neighborhood of a single-channel image."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    squeeze = False
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ValueError("min_filter takes a single-channel image")
        img = img[:, :, 0]
        squeeze = True
    out = ndimage.minimum_filter(img, size=2 * radius + 1, mode="nearest")
    return out[:, :, None] if squeeze else out


# sRGB primaries, D65 white.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = _RGB_TO_XYZ.sum(axis=1)


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t):
    delta = 6.0 / 29.0
    return np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB (display, [0,1]) to CIELab under D65; L in [0, 100]."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("rgb_to_lab needs a 3-channel image")
    lin = _srgb_to_linear(np.asarray(img, dtype=np.float64))
    xyz = lin @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment and edge clamping."""
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()

    def coords(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(height, h)
    x0, x1, fx = coords(width, w)
    src = np.asarray(img, dtype=np.float64)
    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return out.astype(img.dtype, copy=False)
