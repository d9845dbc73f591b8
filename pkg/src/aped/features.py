"""Speech-feature matrices, frame stacking/subsampling, and file I/O.

Feature files are binary: magic "APEDFEAT", one format-version byte, two
little-endian uint32 (frames, dims), then frames*dims little-endian float64
values in row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"APEDFEAT"
FORMAT_VERSION = 1
RAW_DIMS = 39


class FeatureFileError(ValueError):
    """Malformed header, truncated payload, or non-finite values."""


@dataclass
class FeatureMatrix:
    """frames x dims array of double-precision feature values."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise FeatureFileError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] == 0:
            raise FeatureFileError("feature matrix must have at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise FeatureFileError("feature matrix contains non-finite values")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass
class StackedFeatures:
    """Output of stack_subsample: frames' = ceil(frames/subsample), dims' = dims*stack."""

    values: np.ndarray
    stack: int
    subsample: int

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


def stack_subsample(raw: FeatureMatrix, stack: int = 5, subsample: int = 4) -> StackedFeatures:
    """Stack `stack` consecutive frames starting at every `subsample`-th frame.

    Output frame j concatenates raw frames [j*subsample, j*subsample + stack),
    zero-padded past the end of the input.
    """
    if stack < 1 or subsample < 1:
        raise ValueError("stack and subsample must be >= 1")
    frames, dims = raw.values.shape
    out_frames = -(-frames // subsample)  # ceil
    padded = np.zeros((frames + stack, dims), dtype=np.float64)
    padded[:frames] = raw.values
    out = np.empty((out_frames, dims * stack), dtype=np.float64)
    for j in range(out_frames):
        start = j * subsample
        out[j] = padded[start : start + stack].reshape(-1)
    return StackedFeatures(out, stack=stack, subsample=subsample)


def write_feature_file(mat: FeatureMatrix, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<II", mat.frames, mat.dims))
        f.write(mat.values.astype("<f8").tobytes())


def read_feature_file(path) -> FeatureMatrix:
    with open(path, "rb") as f:
        blob = f.read()
    header_len = len(MAGIC) + 1 + 8
    if len(blob) < header_len or blob[: len(MAGIC)] != MAGIC:
        raise FeatureFileError(f"{path}: not a feature file (bad magic)")
    version = blob[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"{path}: unsupported format version {version}")
    frames, dims = struct.unpack_from("<II", blob, len(MAGIC) + 1)
    payload = blob[header_len:]
    expected = frames * dims * 8
    if len(payload) != expected:
        raise FeatureFileError(
            f"{path}: payload truncated or oversized (expected {expected} bytes, got {len(payload)})"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(frames, dims)
    if not np.all(np.isfinite(values)):
        raise FeatureFileError(f"{path}: payload contains non-finite values")
    return FeatureMatrix(values.copy())
