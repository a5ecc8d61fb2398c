"""Spatio-temporal conformal thresholds and the online flagging rule (`.fcal`).

Calibration splits the held-out nominal episodes in two: the first half
estimates the mean and variability of per-patch heatmap scores at each
aligned timestep, the second supplies the normalized deviations whose
finite-sample quantile becomes the bandwidth `h`.  A frame is flagged
online when the fraction of monitored patches above `mu + rho * h` at
its aligned timestep surpasses the sensitivity `tau`.

Two degraded baselines reuse the same decision machinery: a pooled
variant that ignores spatial structure (one bound per timestep) and a
plain Gaussian fit whose bandwidth is a fixed sigma multiplier.
"""

from __future__ import annotations

import base64
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InsufficientData, ParameterError, ValidationError
from .memory import NominalMemory
from .scoring import DEFAULT_CONFIG, ScoreConfig, ScoreResult, score_episode
from .tensor_io import FeatureTensor, _as_sink, _as_source, _read_exact, split_nominal

PROFILE_MAGIC = b"FCAL"
PROFILE_VERSION = 1
FILE_SUFFIX = ".fcal"
DEFAULT_RHO_FLOOR = 1e-6
DEFAULT_PATCH_FRACTION = 0.05

METHOD_SPACE = "cp-space"
METHOD_TIME = "cp-time"
METHOD_GAUSSIAN = "gaussian"
_METHOD_CODES = {METHOD_SPACE: 0, METHOD_TIME: 1, METHOD_GAUSSIAN: 2}

_HEADER = struct.Struct("<4sIBIIffffII")


@dataclass(frozen=True)
class CalibrationProfile:
    """Per-(t, patch) score means/modulations plus the conformal bandwidth.

    Scalars are rounded to float32 at construction so an in-memory
    profile and its persisted twin make identical decisions.
    """

    method: str
    mu: np.ndarray
    rho: np.ndarray
    h: float
    alpha: float | None
    tau: float
    rho_floor: float
    patch_mask: np.ndarray
    calibration_sizes: tuple[int, int]

    def __post_init__(self) -> None:
        if self.method not in _METHOD_CODES:
            raise ParameterError(f"unknown method {self.method!r}")
        mu = np.asarray(self.mu, dtype=np.float32)
        rho = np.asarray(self.rho, dtype=np.float32)
        mask = np.asarray(self.patch_mask, dtype=bool)
        if mu.ndim != 2 or mu.shape != rho.shape:
            raise ValidationError(f"mu/rho must share a (T,D) shape, got {mu.shape} vs {rho.shape}")
        width = 1 if self.pooled else mask.size
        if mu.shape[1] != width:
            raise ValidationError(f"profile width {mu.shape[1]} does not match expected {width}")
        if not mask.any():
            raise ValidationError("at least one patch must stay unmasked")
        if not (self.tau > 0 and self.tau <= 1):
            raise ParameterError(f"tau must lie in (0, 1], got {self.tau}")
        if self.alpha is not None and not (0 < self.alpha < 1):
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (self.rho_floor > 0):
            raise ParameterError(f"rho_floor must be > 0, got {self.rho_floor}")
        if not (rho >= np.float32(self.rho_floor)).all():
            raise ValidationError("rho fell below rho_floor")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "patch_mask", mask)
        object.__setattr__(self, "h", float(np.float32(self.h)))
        object.__setattr__(self, "tau", float(np.float32(self.tau)))
        object.__setattr__(self, "rho_floor", float(np.float32(self.rho_floor)))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", float(np.float32(self.alpha)))

    @property
    def pooled(self) -> bool:
        return self.method == METHOD_TIME

    @property
    def horizon(self) -> int:
        return self.mu.shape[0]

    @property
    def n_patches(self) -> int:
        return self.patch_mask.size


@dataclass(frozen=True)
class ThresholdDecision:
    anomalous: bool
    exceed_fraction: float
    exceeding_patches: list[int]
    t_min: int


def _resolve_mask(n_patches: int, patch_mask) -> np.ndarray:
    if patch_mask is None:
        return np.ones(n_patches, dtype=bool)
    mask = np.asarray(patch_mask, dtype=bool)
    if mask.shape != (n_patches,):
        raise ValidationError(f"patch mask must have shape ({n_patches},), got {mask.shape}")
    if not mask.any():
        raise ValidationError("at least one patch must stay unmasked")
    return mask


def _frame_values(result: ScoreResult, mask: np.ndarray, pooled: bool) -> np.ndarray:
    heat = np.asarray(result.heatmap, dtype=np.float64)
    return np.array([heat[mask].mean()]) if pooled else heat


def _aligned_stats(
    memory: NominalMemory,
    episodes: FeatureTensor,
    mask: np.ndarray,
    pooled: bool,
    config: ScoreConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean/std of heatmap values binned by aligned timestep, nearest-filled.

    Frames are binned at their `t_min`, not their wall-clock index, so
    calibration survives variable execution speeds.
    """
    width = 1 if pooled else memory.n_patches
    buckets: list[list[np.ndarray]] = [[] for _ in range(memory.horizon)]
    for n in range(episodes.n_episodes):
        for result in score_episode(memory, episodes.episode(n), config=config):
            buckets[result.t_min].append(_frame_values(result, mask, pooled))
    mu = np.zeros((memory.horizon, width))
    sigma = np.zeros((memory.horizon, width))
    hit = np.array([len(b) > 0 for b in buckets])
    for t in np.flatnonzero(hit):
        stack = np.stack(buckets[t])
        mu[t] = stack.mean(axis=0)
        sigma[t] = stack.std(axis=0, ddof=0)
    hit_idx = np.flatnonzero(hit)
    for t in np.flatnonzero(~hit):
        nearest = hit_idx[np.argmin(np.abs(hit_idx - t))]  # ties resolve to the lower t
        mu[t] = mu[nearest]
        sigma[t] = sigma[nearest]
    return mu, sigma


def _episode_max_deviations(
    memory: NominalMemory,
    episodes: FeatureTensor,
    mu: np.ndarray,
    rho: np.ndarray,
    mask: np.ndarray,
    pooled: bool,
    config: ScoreConfig,
) -> np.ndarray:
    scope = slice(None) if pooled else mask
    out = np.empty(episodes.n_episodes)
    for n in range(episodes.n_episodes):
        worst = -np.inf
        for result in score_episode(memory, episodes.episode(n), config=config):
            values = _frame_values(result, mask, pooled)
            dev = (values - mu[result.t_min]) / rho[result.t_min]
            worst = max(worst, float(dev[scope].max()))
        out[n] = worst
    return out


def _conformal_bandwidth(deviations: np.ndarray, alpha: float) -> float:
    """Finite-sample (1-alpha) quantile: the ceil((m+1)(1-alpha))-th smallest."""
    m = len(deviations)
    rank = math.ceil((m + 1) * (1.0 - alpha) - 1e-9)
    ordered = np.sort(deviations)
    return float(ordered[min(rank, m) - 1])


def calibrate(
    memory: NominalMemory,
    calibration: FeatureTensor,
    alpha: float,
    seed: int = 0,
    rho_floor: float = DEFAULT_RHO_FLOOR,
    patch_mask=None,
    tau: float = DEFAULT_PATCH_FRACTION,
    config: ScoreConfig = DEFAULT_CONFIG,
) -> CalibrationProfile:
    """Spatio-temporal conformal calibration on held-out nominal episodes.

    The episode-level maximum of normalized deviations is the conformity
    score, so `h` bounds the whole-episode false-flag rate at `alpha`
    under exchangeability.
    """
    if not (0 < alpha < 1):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if calibration.n_episodes < 2:
        raise InsufficientData(f"calibration needs >= 2 episodes, got {calibration.n_episodes}")
    mask = _resolve_mask(memory.n_patches, patch_mask)
    part_a, part_b = split_nominal(calibration, seed)
    mu, sigma = _aligned_stats(memory, part_a, mask, pooled=False, config=config)
    rho = np.maximum(sigma, rho_floor)
    deviations = _episode_max_deviations(memory, part_b, mu, rho, mask, pooled=False, config=config)
    return CalibrationProfile(
        method=METHOD_SPACE,
        mu=mu,
        rho=rho,
        h=_conformal_bandwidth(deviations, alpha),
        alpha=alpha,
        tau=tau,
        rho_floor=rho_floor,
        patch_mask=mask,
        calibration_sizes=(part_a.n_episodes, part_b.n_episodes),
    )


def cp_time_baseline(
    memory: NominalMemory,
    calibration: FeatureTensor,
    alpha: float,
    seed: int = 0,
    rho_floor: float = DEFAULT_RHO_FLOOR,
    patch_mask=None,
    tau: float = DEFAULT_PATCH_FRACTION,
    config: ScoreConfig = DEFAULT_CONFIG,
) -> CalibrationProfile:
    """Temporal-only conformal baseline: one pooled bound per timestep.

    Identical to `calibrate` when P = 1.
    """
    if not (0 < alpha < 1):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if calibration.n_episodes < 2:
        raise InsufficientData(f"calibration needs >= 2 episodes, got {calibration.n_episodes}")
    mask = _resolve_mask(memory.n_patches, patch_mask)
    part_a, part_b = split_nominal(calibration, seed)
    mu, sigma = _aligned_stats(memory, part_a, mask, pooled=True, config=config)
    rho = np.maximum(sigma, rho_floor)
    deviations = _episode_max_deviations(memory, part_b, mu, rho, mask, pooled=True, config=config)
    return CalibrationProfile(
        method=METHOD_TIME,
        mu=mu,
        rho=rho,
        h=_conformal_bandwidth(deviations, alpha),
        alpha=alpha,
        tau=tau,
        rho_floor=rho_floor,
        patch_mask=mask,
        calibration_sizes=(part_a.n_episodes, part_b.n_episodes),
    )


def gaussian_threshold_baseline(
    memory: NominalMemory,
    calibration: FeatureTensor,
    k_sigma: float,
    rho_floor: float = DEFAULT_RHO_FLOOR,
    patch_mask=None,
    tau: float = DEFAULT_PATCH_FRACTION,
    config: ScoreConfig = DEFAULT_CONFIG,
) -> CalibrationProfile:
    """Gaussian-fit baseline: bound = mean + k_sigma * std, no conformal step.

    All calibration episodes feed the fit (no A/B split is needed when
    the bandwidth is fixed); the profile reuses `decide` with h = k_sigma.
    """
    if calibration.n_episodes < 2:
        raise InsufficientData(f"calibration needs >= 2 episodes, got {calibration.n_episodes}")
    mask = _resolve_mask(memory.n_patches, patch_mask)
    mu, sigma = _aligned_stats(memory, calibration, mask, pooled=False, config=config)
    return CalibrationProfile(
        method=METHOD_GAUSSIAN,
        mu=mu,
        rho=np.maximum(sigma, rho_floor),
        h=float(k_sigma),
        alpha=None,
        tau=tau,
        rho_floor=rho_floor,
        patch_mask=mask,
        calibration_sizes=(calibration.n_episodes, 0),
    )


def decide(profile: CalibrationProfile, result: ScoreResult) -> ThresholdDecision:
    """Compare one scored frame against its calibrated bounds.

    A frame is anomalous when the exceeding fraction of monitored
    patches strictly surpasses `tau`.
    """
    if not 0 <= result.t_min < profile.horizon:
        raise ValidationError(f"t_min {result.t_min} outside calibrated range [0, {profile.horizon})")
    heat = np.asarray(result.heatmap, dtype=np.float64)
    if heat.shape != (profile.n_patches,):
        raise ValidationError(f"heatmap shape {heat.shape} does not match profile P={profile.n_patches}")
    mask = profile.patch_mask
    bound = profile.mu[result.t_min].astype(np.float64) + profile.rho[result.t_min].astype(np.float64) * profile.h
    unmasked = np.flatnonzero(mask)
    if profile.pooled:
        exceeded = bool(heat[mask].mean() > bound[0])
        exceeding = unmasked.tolist() if exceeded else []
    else:
        exceeding = np.flatnonzero((heat > bound) & mask).tolist()
    fraction = len(exceeding) / len(unmasked)
    return ThresholdDecision(
        anomalous=fraction > profile.tau,
        exceed_fraction=fraction,
        exceeding_patches=exceeding,
        t_min=result.t_min,
    )


def save_profile(profile: CalibrationProfile, destination) -> None:
    """Binary `.fcal` twin of the profile (bit-exact round trip)."""
    sink, owned = _as_sink(destination)
    try:
        alpha = float("nan") if profile.alpha is None else profile.alpha
        sink.write(
            _HEADER.pack(
                PROFILE_MAGIC,
                PROFILE_VERSION,
                _METHOD_CODES[profile.method],
                profile.horizon,
                profile.n_patches,
                alpha,
                profile.h,
                profile.tau,
                profile.rho_floor,
                profile.calibration_sizes[0],
                profile.calibration_sizes[1],
            )
        )
        sink.write(profile.patch_mask.astype(np.uint8).tobytes())
        sink.write(np.ascontiguousarray(profile.mu, dtype="<f4").tobytes())
        sink.write(np.ascontiguousarray(profile.rho, dtype="<f4").tobytes())
    finally:
        if owned:
            sink.close()


def load_profile(source) -> CalibrationProfile:
    src, owned = _as_source(source)
    try:
        magic, version, code, t, p, alpha, h, tau, rho_floor, cal_a, cal_b = _HEADER.unpack(
            _read_exact(src, _HEADER.size, "header")
        )
        if magic != PROFILE_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {PROFILE_MAGIC!r}")
        if version != PROFILE_VERSION:
            raise FormatError(f"unsupported profile version {version}, expected {PROFILE_VERSION}")
        methods = {v: k for k, v in _METHOD_CODES.items()}
        if code not in methods:
            raise FormatError(f"unknown method code {code}")
        method = methods[code]
        width = 1 if method == METHOD_TIME else p
        mask = np.frombuffer(_read_exact(src, p, "patch mask"), dtype=np.uint8).astype(bool)
        grids = np.frombuffer(_read_exact(src, 2 * t * width * 4, "mu/rho payload"), dtype="<f4")
        if src.read(1):
            raise FormatError("trailing bytes after rho payload")
        return CalibrationProfile(
            method=method,
            mu=grids[: t * width].reshape(t, width),
            rho=grids[t * width :].reshape(t, width),
            h=float(h),
            alpha=None if math.isnan(alpha) else float(alpha),
            tau=float(tau),
            rho_floor=float(rho_floor),
            patch_mask=mask,
            calibration_sizes=(cal_a, cal_b),
        )
    finally:
        if owned:
            src.close()


def profile_to_json(profile: CalibrationProfile) -> str:
    """Structured-text twin of `.fcal` (float32 grids as base64)."""
    doc = {
        "format": "fcal",
        "version": PROFILE_VERSION,
        "method": profile.method,
        "horizon": profile.horizon,
        "n_patches": profile.n_patches,
        "alpha": profile.alpha,
        "h": profile.h,
        "tau": profile.tau,
        "rho_floor": profile.rho_floor,
        "calibration_sizes": list(profile.calibration_sizes),
        "patch_mask": profile.patch_mask.astype(int).tolist(),
        "mu_b64": base64.b64encode(np.ascontiguousarray(profile.mu, dtype="<f4").tobytes()).decode("ascii"),
        "rho_b64": base64.b64encode(np.ascontiguousarray(profile.rho, dtype="<f4").tobytes()).decode("ascii"),
    }
    return json.dumps(doc, indent=2) + "\n"


def profile_from_json(text: str) -> CalibrationProfile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"profile JSON is unparseable: {exc}") from exc
    if doc.get("format") != "fcal":
        raise FormatError(f"not a profile document (format={doc.get('format')!r})")
    if doc.get("version") != PROFILE_VERSION:
        raise FormatError(f"unsupported profile version {doc.get('version')}")
    t, p = int(doc["horizon"]), int(doc["n_patches"])
    width = 1 if doc["method"] == METHOD_TIME else p
    mu = np.frombuffer(base64.b64decode(doc["mu_b64"]), dtype="<f4")
    rho = np.frombuffer(base64.b64decode(doc["rho_b64"]), dtype="<f4")
    if mu.size != t * width or rho.size != t * width:
        raise FormatError(f"grid payload size mismatch: expected {t * width} values")
    return CalibrationProfile(
        method=doc["method"],
        mu=mu.reshape(t, width),
        rho=rho.reshape(t, width),
        h=float(doc["h"]),
        alpha=None if doc["alpha"] is None else float(doc["alpha"]),
        tau=float(doc["tau"]),
        rho_floor=float(doc["rho_floor"]),
        patch_mask=np.asarray(doc["patch_mask"], dtype=bool),
        calibration_sizes=tuple(doc["calibration_sizes"]),
    )
