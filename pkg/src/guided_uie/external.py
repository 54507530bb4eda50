"""Binary file of precomputed noise predictions, one grid per timestep.

Layout (little-endian): six int32 header fields ``magic, version, T, H, W, C``
followed by ``T * H * W * C`` float32 values ordered (t, row, column, channel)
with t running 1..T.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .diffusion import VariancePolicy

MAGIC = int.from_bytes(b"EPSH", "little")
VERSION = 1
HEADER = struct.Struct("<6i")


class PredictorFileError(ValueError):
    pass


def write_predictor_file(path, eps: np.ndarray) -> None:
    eps = np.asarray(eps)
    if eps.ndim != 4:
        raise ValueError("expected an array of shape (T, H, W, C)")
    T, H, W, C = eps.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, T, H, W, C))
        fh.write(np.ascontiguousarray(eps, dtype="<f4").tobytes())


def read_predictor_file(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        data = fh.read()
    if len(data) < HEADER.size:
        raise PredictorFileError("file shorter than its header")
    magic, version, T, H, W, C = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise PredictorFileError(f"bad magic {magic:#x}")
    if version != VERSION:
        raise PredictorFileError(f"unsupported version {version}")
    if min(T, H, W, C) <= 0:
        raise PredictorFileError("header dimensions must be positive")
    expected = T * H * W * C * 4
    payload = data[HEADER.size :]
    if len(payload) != expected:
        raise PredictorFileError(f"payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(T, H, W, C)


class FilePredictor:
    """Replays stored predictions; the value ignores x_t, only t selects the grid."""

    def __init__(self, path, variance_policy: VariancePolicy = VariancePolicy.FIXED_POSTERIOR):
        self.path = os.fspath(path)
        self.eps = read_predictor_file(path)
        self.variance_policy = variance_policy

    @property
    def T(self) -> int:
        return self.eps.shape[0]

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside the stored 1..{self.T}")
        grid = self.eps[t - 1]
        if grid.shape != np.shape(x_t):
            raise ValueError(f"stored grid {grid.shape} does not match sample {np.shape(x_t)}")
        return grid.astype(np.float64)
