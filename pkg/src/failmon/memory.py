"""Gaussian statistical memory of nominal demonstrations (`.fmem`).

The memory collapses the episode axis of a nominal feature tensor into a
per-(timestep, patch, feature) mean and standard deviation.  Population
(1/N) deviation is used so a single episode is still well defined; a
strictly positive floor keeps later normalized distances finite for
constant features.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InsufficientData, ParameterError, ValidationError
from .tensor_io import FeatureTensor, _as_sink, _as_source, _read_exact

MEMORY_MAGIC = b"FMEM"
MEMORY_VERSION = 1
FILE_SUFFIX = ".fmem"
DEFAULT_SIGMA_FLOOR = 1e-3

_HEADER = struct.Struct("<4sIIIIIf")  # magic, version, T, P, F, episode count, sigma_floor


@dataclass(frozen=True)
class NominalMemory:
    """Per-(t, p, f) nominal mean/std, both shaped (T, P, F) float32.

    `sigma_floor` is rounded to float32 at construction so a memory and
    its persisted `.fmem` twin are indistinguishable.
    """

    mean: np.ndarray
    std: np.ndarray
    sigma_floor: float
    source_episode_count: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float32)
        std = np.asarray(self.std, dtype=np.float32)
        if mean.ndim != 3 or mean.shape != std.shape:
            raise ValidationError(f"mean/std must share a (T,P,F) shape, got {mean.shape} vs {std.shape}")
        if not (self.sigma_floor > 0):
            raise ParameterError(f"sigma_floor must be > 0, got {self.sigma_floor}")
        object.__setattr__(self, "sigma_floor", float(np.float32(self.sigma_floor)))
        if not np.isfinite(mean).all():
            raise ValidationError("memory mean contains non-finite values")
        if not (std >= np.float32(self.sigma_floor)).all():
            raise ValidationError("memory std fell below sigma_floor")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @property
    def n_patches(self) -> int:
        return self.mean.shape[1]

    @property
    def n_features(self) -> int:
        return self.mean.shape[2]


def build_memory(
    nominal: FeatureTensor,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    horizon: int | None = None,
) -> NominalMemory:
    """Aggregate nominal episodes into Gaussian statistics.

    `horizon` pins the memory length: tensors shorter than it are
    rejected, longer ones are truncated (loudly).  With one episode the
    deviation is identically `sigma_floor`.
    """
    if not (sigma_floor > 0):
        raise ParameterError(f"sigma_floor must be > 0, got {sigma_floor}")
    if nominal.n_episodes < 1:
        raise InsufficientData("cannot build memory from an empty tensor")
    data = nominal.data
    if horizon is not None:
        if nominal.horizon < horizon:
            raise ValidationError(
                f"episodes of length {nominal.horizon} are shorter than the required horizon {horizon}"
            )
        if nominal.horizon > horizon:
            warnings.warn(
                f"truncating episodes from {nominal.horizon} to horizon {horizon} frames",
                stacklevel=2,
            )
            data = data[:, :horizon]
    stats = data.astype(np.float64)
    mean = stats.mean(axis=0)
    std = np.maximum(stats.std(axis=0, ddof=0), sigma_floor)
    return NominalMemory(
        mean=mean.astype(np.float32),
        std=std.astype(np.float32),
        sigma_floor=float(sigma_floor),
        source_episode_count=nominal.n_episodes,
    )


def save_memory(memory: NominalMemory, destination) -> None:
    sink, owned = _as_sink(destination)
    try:
        t, p, f = memory.mean.shape
        sink.write(
            _HEADER.pack(MEMORY_MAGIC, MEMORY_VERSION, t, p, f, memory.source_episode_count, memory.sigma_floor)
        )
        sink.write(np.ascontiguousarray(memory.mean, dtype="<f4").tobytes())
        sink.write(np.ascontiguousarray(memory.std, dtype="<f4").tobytes())
    finally:
        if owned:
            sink.close()


def load_memory(source) -> NominalMemory:
    src, owned = _as_source(source)
    try:
        magic, version, t, p, f, count, sigma_floor = _HEADER.unpack(_read_exact(src, _HEADER.size, "header"))
        if magic != MEMORY_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MEMORY_MAGIC!r}")
        if version != MEMORY_VERSION:
            raise FormatError(f"unsupported memory version {version}, expected {MEMORY_VERSION}")
        if min(t, p, f) < 1:
            raise FormatError(f"illegal dimensions T={t} P={p} F={f}")
        span = t * p * f
        grids = np.frombuffer(_read_exact(src, 2 * span * 4, "mean/std payload"), dtype="<f4")
        if src.read(1):
            raise FormatError("trailing bytes after std payload")
        return NominalMemory(
            mean=grids[:span].reshape(t, p, f).astype(np.float32),
            std=grids[span:].reshape(t, p, f).astype(np.float32),
            sigma_floor=float(np.float32(sigma_floor)),
            source_episode_count=count,
        )
    finally:
        if owned:
            src.close()
