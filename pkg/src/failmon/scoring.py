"""Frame-level anomaly scores, temporal alignment, and patch heatmaps.

The score of a frame is the minimum Sinkhorn transport cost between its
patch set and the memorized patch set, taken across nominal timesteps;
the argmin is the alignment anchor `t_min`.  The heatmap assigns each
query patch its cheapest match cost at the aligned timestep, localizing
what drove the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ValidationError
from .memory import NominalMemory
from .ot import (
    DEFAULT_EPSILON_SCALE,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    _check_query,
    _cost_tensor,
    _sinkhorn_log_batch,
)


@dataclass(frozen=True)
class ScoreConfig:
    """Knobs for the per-timestep Sinkhorn solves.

    `epsilon` fixes the regularization absolutely; when None each
    timestep uses `epsilon_scale * mean(cost)` (scale-free default).
    """

    epsilon: float | None = None
    epsilon_scale: float = DEFAULT_EPSILON_SCALE
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL

    def __post_init__(self) -> None:
        if self.epsilon is not None and not (self.epsilon > 0):
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not (self.epsilon_scale > 0):
            raise ParameterError(f"epsilon_scale must be > 0, got {self.epsilon_scale}")


DEFAULT_CONFIG = ScoreConfig()


@dataclass(frozen=True)
class ScoreResult:
    """Per-frame output: scalar score, aligned timestep, per-patch heatmap."""

    score: float
    t_min: int
    heatmap: np.ndarray
    converged: bool
    per_t_costs: np.ndarray | None = None


def _resolve_window(memory: NominalMemory, window: tuple[int, int] | None) -> np.ndarray:
    if window is None:
        lo, hi = 0, memory.horizon
    else:
        lo, hi = max(0, int(window[0])), min(memory.horizon, int(window[1]))
    if lo >= hi:
        raise ValidationError(f"search window {window} is empty within [0, {memory.horizon})")
    return np.arange(lo, hi)


def _score_many(
    memory: NominalMemory,
    frames: np.ndarray,
    timesteps: np.ndarray,
    config: ScoreConfig,
    keep_per_t: bool,
) -> list[ScoreResult]:
    """Solve every (frame, timestep) transport problem in one batch."""
    n_frames = frames.shape[0]
    n_t = len(timesteps)
    p = memory.n_patches
    costs = np.empty((n_frames, n_t, p, p))
    for i in range(n_frames):
        costs[i] = _cost_tensor(memory, frames[i], timesteps)
    flat = costs.reshape(n_frames * n_t, p, p)
    if config.epsilon is not None:
        eps = np.full(n_frames * n_t, float(config.epsilon))
    else:
        means = flat.mean(axis=(1, 2))
        eps = np.where(means > 0, config.epsilon_scale * means, 1.0)
    ot_costs = np.empty(n_frames * n_t)
    converged = np.empty(n_frames * n_t, dtype=bool)
    chunk = max(1, 32768 // (p * p))  # keep per-iteration arrays cache-resident
    for lo in range(0, flat.shape[0], chunk):
        hi = lo + chunk
        _, ot_costs[lo:hi], converged[lo:hi], _ = _sinkhorn_log_batch(
            flat[lo:hi], eps[lo:hi], config.max_iter, config.tol
        )
    ot_costs = ot_costs.reshape(n_frames, n_t)
    converged = converged.reshape(n_frames, n_t)
    results = []
    for i in range(n_frames):
        best = int(np.argmin(ot_costs[i]))  # first occurrence = lowest t
        results.append(
            ScoreResult(
                score=float(ot_costs[i, best]),
                t_min=int(timesteps[best]),
                heatmap=costs[i, best].min(axis=0),
                converged=bool(converged[i].all()),
                per_t_costs=ot_costs[i] if keep_per_t else None,
            )
        )
    return results


def score_frame(
    memory: NominalMemory,
    query: np.ndarray,
    window: tuple[int, int] | None = None,
    config: ScoreConfig = DEFAULT_CONFIG,
    keep_per_t: bool = False,
) -> ScoreResult:
    """Score one (P, F) frame against the memory.

    `window` restricts the timestep search to [lo, hi); ties in the
    minimum resolve to the smallest timestep so alignment never jumps
    forward gratuitously.
    """
    query = _check_query(memory, query)
    timesteps = _resolve_window(memory, window)
    return _score_many(memory, query[None], timesteps, config, keep_per_t)[0]


def score_episode(
    memory: NominalMemory,
    episode: np.ndarray,
    window: int | None = None,
    config: ScoreConfig = DEFAULT_CONFIG,
    keep_per_t: bool = False,
) -> list[ScoreResult]:
    """Score every frame of a (n_frames, P, F) episode in order.

    `window=None` searches all timesteps for every frame (the reference
    behavior) and batches the whole episode through one solver call.
    An integer radius `w` searches the first frame fully and every later
    frame within `t_min(previous) ± w`, trading optimality inside the
    window for an O(T/w) speedup.
    """
    episode = np.asarray(episode, dtype=np.float64)
    if episode.ndim != 3:
        raise ValidationError(f"episode must be (n_frames, P, F), got shape {episode.shape}")
    if episode.shape[0] == 0:
        return []
    if window is not None and window < 0:
        raise ParameterError(f"window radius must be >= 0, got {window}")
    for frame in episode:
        _check_query(memory, frame)
    if window is None:
        return _score_many(memory, episode, _resolve_window(memory, None), config, keep_per_t)
    results: list[ScoreResult] = []
    prev_t: int | None = None
    for frame in episode:
        span = None if prev_t is None else (prev_t - window, prev_t + window + 1)
        result = score_frame(memory, frame, window=span, config=config, keep_per_t=keep_per_t)
        results.append(result)
        prev_t = result.t_min
    return results


def write_heatmap_csv(heatmap: np.ndarray, destination) -> None:
    """Heatmap as `patch_index,value` rows."""
    lines = ["patch_index,value"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(np.asarray(heatmap).ravel())]
    text = "\n".join(lines) + "\n"
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text)
    else:
        destination.write(text)


def write_heatmap_pgm(heatmap: np.ndarray, destination) -> None:
    """Heatmap as a square grayscale PGM (min-max normalized to 0..255).

    Requires P to be a perfect square; constant maps render black.
    """
    values = np.asarray(heatmap, dtype=np.float64).ravel()
    side = math.isqrt(len(values))
    if side * side != len(values):
        raise ParameterError(f"heatmap length {len(values)} is not a perfect square")
    lo, hi = values.min(), values.max()
    scaled = np.zeros(len(values)) if hi <= lo else (values - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8).reshape(side, side)
    blob = f"P5\n{side} {side}\n255\n".encode("ascii") + pixels.tobytes()
    if isinstance(destination, (str, Path)):
        Path(destination).write_bytes(blob)
    else:
        destination.write(blob)
