"""Seeded synthetic trajectory generator with frame-level labels.

Desk-scale stand-in for real demonstration corpora: smooth sinusoidal
base trajectories per (patch, feature), Gaussian observation noise,
optional per-episode speed warps, and injected patch shifts expressed in
noise-sigma units so event difficulty maps directly onto the normalized
distance used for scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .tensor_io import FeatureTensor

KIND_BENIGN = "benign"
KIND_FAILURE = "failure"


@dataclass(frozen=True)
class AnomalyEvent:
    """Additive shift on `patches` for frames in [start, end)."""

    start: int
    end: int
    patches: tuple[int, ...]
    magnitude: float  # in noise_sigma units
    kind: str = KIND_BENIGN


@dataclass(frozen=True)
class SynthSpec:
    horizon: int
    n_patches: int
    n_features: int
    noise_sigma: float = 0.1
    base_seed: int = 0
    n_waves: int = 3
    max_cycles: float = 2.0  # highest sinusoid frequency, in cycles per horizon
    events: tuple[AnomalyEvent, ...] = field(default_factory=tuple)
    speed_warp: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        if min(self.horizon, self.n_patches, self.n_features) < 1:
            raise ParameterError(f"degenerate dims T={self.horizon} P={self.n_patches} F={self.n_features}")
        if not (self.noise_sigma > 0):
            raise ParameterError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if not (1 <= self.n_waves <= 3):
            raise ParameterError(f"n_waves must be in 1..3, got {self.n_waves}")
        if not (self.max_cycles > 0):
            raise ParameterError(f"max_cycles must be > 0, got {self.max_cycles}")
        lo, hi = self.speed_warp
        if not (0 < lo <= hi):
            raise ParameterError(f"speed warp range must satisfy 0 < lo <= hi, got {self.speed_warp}")
        for ev in self.events:
            if not (0 <= ev.start < ev.end <= self.horizon):
                raise ParameterError(f"event window [{ev.start}, {ev.end}) outside [0, {self.horizon})")
            if ev.magnitude < 0:
                raise ParameterError(f"event magnitude must be >= 0, got {ev.magnitude}")
            if ev.kind not in (KIND_BENIGN, KIND_FAILURE):
                raise ParameterError(f"event kind must be benign or failure, got {ev.kind!r}")
            if any(not 0 <= p < self.n_patches for p in ev.patches):
                raise ParameterError(f"event patches {ev.patches} outside [0, {self.n_patches})")
            if len(set(ev.patches)) != len(ev.patches):
                raise ParameterError(f"event patches must be unique, got {ev.patches}")

    def without_events(self) -> "SynthSpec":
        return replace(self, events=())


def base_signal(spec: SynthSpec) -> np.ndarray:
    """Deterministic smooth (T, P, F) trajectory from `base_seed`.

    Sum of `n_waves` sinusoids per (patch, feature) with at most two
    cycles over the horizon, plus a per-(patch, feature) offset that
    separates patches in feature space.
    """
    rng = np.random.default_rng(spec.base_seed)
    shape = (spec.n_waves, spec.n_patches, spec.n_features)
    amplitude = rng.uniform(0.4, 1.2, shape)
    cycles = rng.uniform(0.25, spec.max_cycles, shape)
    phase = rng.uniform(0.0, 2.0 * np.pi, shape)
    offset = rng.normal(0.0, 1.5, (spec.n_patches, spec.n_features))
    t = np.arange(spec.horizon) / max(1, spec.horizon)
    waves = amplitude[None] * np.sin(2.0 * np.pi * cycles[None] * t[:, None, None, None] + phase[None])
    return offset[None] + waves.sum(axis=1)


def generate(
    spec: SynthSpec,
    n_episodes: int,
    seed: int,
) -> tuple[FeatureTensor, np.ndarray, np.ndarray]:
    """Sample labeled episodes: (tensor, anomaly labels, failure labels).

    Labels are (n_episodes, T) uint8 marking frames inside any event /
    any failure-kind event.  Identical (spec, seed) pairs reproduce the
    tensor bit for bit.
    """
    if n_episodes < 1:
        raise ParameterError(f"n_episodes must be >= 1, got {n_episodes}")
    rng = np.random.default_rng(seed)
    base = base_signal(spec)
    t_grid = np.arange(spec.horizon, dtype=np.float64)
    episodes = np.empty((n_episodes, spec.horizon, spec.n_patches, spec.n_features), dtype=np.float64)
    lo, hi = spec.speed_warp
    for n in range(n_episodes):
        factor = lo if lo == hi else rng.uniform(lo, hi)
        source = np.clip(t_grid * factor, 0.0, spec.horizon - 1.0)
        lower = np.floor(source).astype(int)
        upper = np.minimum(lower + 1, spec.horizon - 1)
        frac = (source - lower)[:, None, None]
        warped = (1.0 - frac) * base[lower] + frac * base[upper]
        episodes[n] = warped + rng.normal(0.0, spec.noise_sigma, warped.shape)
    anomaly = np.zeros((n_episodes, spec.horizon), dtype=np.uint8)
    failure = np.zeros((n_episodes, spec.horizon), dtype=np.uint8)
    for ev in spec.events:
        patches = list(ev.patches)
        episodes[:, ev.start : ev.end, patches, :] += ev.magnitude * spec.noise_sigma
        anomaly[:, ev.start : ev.end] = 1
        if ev.kind == KIND_FAILURE:
            failure[:, ev.start : ev.end] = 1
    tensor = FeatureTensor(
        data=episodes.astype(np.float32),
        encoder_id=f"synth:T{spec.horizon}P{spec.n_patches}F{spec.n_features}s{spec.base_seed}",
    )
    return tensor, anomaly, failure


def write_labels_csv(anomaly: np.ndarray, failure: np.ndarray, destination) -> None:
    """Labels as `episode,frame,anomaly,failure` rows."""
    lines = ["episode,frame,anomaly,failure"]
    for n in range(anomaly.shape[0]):
        for t in range(anomaly.shape[1]):
            lines.append(f"{n},{t},{int(anomaly[n, t])},{int(failure[n, t])}")
    text = "\n".join(lines) + "\n"
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text)
    else:
        destination.write(text)


def spec_from_json(text: str) -> SynthSpec:
    """Parse a generator spec document (see README for the schema)."""
    doc = json.loads(text)
    events = tuple(
        AnomalyEvent(
            start=int(ev["start"]),
            end=int(ev["end"]),
            patches=tuple(int(p) for p in ev["patches"]),
            magnitude=float(ev["magnitude"]),
            kind=ev.get("kind", KIND_BENIGN),
        )
        for ev in doc.get("events", [])
    )
    return SynthSpec(
        horizon=int(doc["horizon"]),
        n_patches=int(doc["n_patches"]),
        n_features=int(doc["n_features"]),
        noise_sigma=float(doc.get("noise_sigma", 0.1)),
        base_seed=int(doc.get("base_seed", 0)),
        n_waves=int(doc.get("n_waves", 3)),
        max_cycles=float(doc.get("max_cycles", 2.0)),
        events=events,
        speed_warp=tuple(doc.get("speed_warp", (1.0, 1.0))),
    )
