"""Classical enhancers that produce the pseudo-label guiding natural-domain sampling."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .degradation import T_FLOOR, estimate_background_light, estimate_transmission
from .fileio import load_image
from .image_core import resize_bilinear

GAIN_RANGE = (0.5, 3.0)
STRETCH_PERCENTILES = (1.0, 99.0)


def identity_labeler(y: np.ndarray) -> np.ndarray:
    return y


def grayworld_contrast_labeler(y: np.ndarray) -> np.ndarray:
    """Gray-world white balance followed by a per-channel 1-99 percentile stretch."""
    if y.ndim != 3 or y.shape[2] != 3:
        raise ValueError("gray-world labeler needs a 3-channel image")
    x = np.asarray(y, dtype=np.float64)
    means = x.mean(axis=(0, 1))
    target = means.mean()
    gains = np.ones(3)
    nz = means > 0
    gains[nz] = np.clip(target / means[nz], *GAIN_RANGE)
    x = x * gains
    lo, hi = np.percentile(x.reshape(-1, 3), STRETCH_PERCENTILES, axis=0)
    span = hi - lo
    stretched = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), x)
    return np.clip(stretched, 0.0, 1.0).astype(y.dtype, copy=False)


def dcp_inversion_labeler(y: np.ndarray) -> np.ndarray:
    """Invert the formation model with estimated background light and transmission."""
    x = np.asarray(y, dtype=np.float64)
    A = estimate_background_light(x)
    T = estimate_transmission(x, A)
    out = (x - (1.0 - T) * A) / np.maximum(T, T_FLOOR)
    return np.clip(out, 0.0, 1.0).astype(y.dtype, copy=False)


class FileLabeler:
    """Reads pseudo-labels produced elsewhere: ``<directory>/<input file name>``."""

    name = "file"

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"pseudo-label directory {self.directory} does not exist")

    def for_image(self, image_name: str, shape) -> np.ndarray:
        path = self.directory / os.path.basename(image_name)
        x_hat = load_image(path)
        if x_hat.shape[:2] != tuple(shape[:2]):
            x_hat = resize_bilinear(x_hat, shape[0], shape[1])
        if x_hat.shape[2] != shape[2]:
            raise ValueError(f"pseudo-label {path} has {x_hat.shape[2]} channels, expected {shape[2]}")
        return x_hat


LABELERS = {
    "identity": identity_labeler,
    "grayworld": grayworld_contrast_labeler,
    "dcp": dcp_inversion_labeler,
}


def get_labeler(name: str):
    try:
        return LABELERS[name]
    except KeyError:
        raise ValueError(f"unknown labeler {name!r}; choose from {sorted(LABELERS)}") from None
