"""Koschmieder-style underwater formation model: y = x * T + (1 - T) * A."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_core import as_image, gaussian_blur, min_filter

DCP_RADIUS = 7
T_FLOOR = 0.1
A_FLOOR = 1e-3


@dataclass
class DegradationParams:
    A: np.ndarray  # (H, W, 3) background light
    T: np.ndarray  # (H, W, 1) transmission shared across channels

    def __post_init__(self):
        self.A = as_image(self.A, dtype=np.float64)
        self.T = as_image(self.T, dtype=np.float64)
        if self.T.shape[2] != 1:
            raise ValueError("transmission map must be single-channel")
        if self.A.shape[:2] != self.T.shape[:2]:
            raise ValueError(f"A {self.A.shape[:2]} and T {self.T.shape[:2]} differ in size")

    def copy(self) -> "DegradationParams":
        return DegradationParams(self.A.copy(), self.T.copy())


def _check_shapes(x, params):
    if np.shape(x)[:2] != params.T.shape[:2]:
        raise ValueError(f"image {np.shape(x)[:2]} does not match params {params.T.shape[:2]}")


def compose(x: np.ndarray, params: DegradationParams) -> np.ndarray:
    """Unclamped formation model, used where gradients must flow."""
    _check_shapes(x, params)
    return x * params.T + (1.0 - params.T) * params.A


def degrade(x: np.ndarray, params: DegradationParams) -> np.ndarray:
    return np.clip(compose(x, params), 0.0, 1.0)


def estimate_background_light(y: np.ndarray) -> np.ndarray:
    h, w = y.shape[:2]
    return gaussian_blur(np.asarray(y, dtype=np.float64), max(h, w) / 8.0)


def estimate_transmission(y: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Dark-channel transmission on the A-normalized image, clamped to [0.1, 1]."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3 or y.shape[2] != 3:
        raise ValueError("transmission estimate needs a 3-channel image")
    norm = y / np.maximum(np.asarray(A, dtype=np.float64), A_FLOOR)
    dark = min_filter(norm.min(axis=2), DCP_RADIUS)
    return np.clip(1.0 - dark, T_FLOOR, 1.0)[:, :, None]


def estimate_params(y: np.ndarray) -> DegradationParams:
    A = estimate_background_light(y)
    return DegradationParams(A, estimate_transmission(y, A))


def refine_transmission(T: np.ndarray, grad_T: np.ndarray, lr: float):
    """One projected gradient step; returns the new map and whether clamping kicked in."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    stepped = T - lr * grad_T
    clamped = np.clip(stepped, 0.0, 1.0)
    return clamped, bool(np.any(clamped != stepped))


def synthesize_underwater(x: np.ndarray, A_color, T0: float, rng: np.random.Generator):
    """Degrade a clean display image with constant A and a smooth T around T0.

    The transmission wobble is min(0.1, 1 - T0) so T0 = 1 leaves the scene intact.
    """
    A_color = np.asarray(A_color, dtype=np.float64)
    if A_color.shape != (3,) or np.any(A_color < 0) or np.any(A_color > 1):
        raise ValueError("A_color must be three values in [0, 1]")
    if not 0 < T0 <= 1:
        raise ValueError("T0 must be in (0, 1]")
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[:2]
    amp = min(0.1, 1.0 - T0)
    noise = gaussian_blur(rng.standard_normal((h, w, 1)), max(h, w) / 8.0)
    peak = np.abs(noise).max()
    if peak > 0:
        noise = noise / peak
    T = np.clip(T0 + amp * noise, 1e-3, 1.0)
    A = np.broadcast_to(A_color, x.shape).copy()
    params = DegradationParams(A, T)
    return degrade(x, params), params
