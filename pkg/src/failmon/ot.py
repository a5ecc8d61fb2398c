"""Optimal-transport alignment between query patches and the nominal memory.

A cost matrix holds normalized Euclidean distances between every query
patch and every memorized patch at one timestep.  Transport between the
two uniform patch distributions is solved with log-domain Sinkhorn
iterations; `exact_ot` enumerates permutations as an independent oracle
for small patch counts (uniform-marginal OT is optimized at a scaled
permutation matrix).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ValidationError
from .memory import NominalMemory

DEFAULT_EPSILON_SCALE = 0.05
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6
ORACLE_MAX_PATCHES = 8


@dataclass(frozen=True)
class CostMatrix:
    """values[p, p_query]: cost of matching query patch p_query to memory patch p."""

    values: np.ndarray
    memory_timestep: int

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValidationError(f"cost matrix must be square, got shape {vals.shape}")
        if not np.isfinite(vals).all() or (vals < 0).any():
            raise ValidationError("cost entries must be finite and >= 0")
        object.__setattr__(self, "values", vals)

    @property
    def n_patches(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between uniform patch marginals (rows: memory, cols: query)."""

    gamma: np.ndarray
    epsilon: float
    converged: bool
    n_iter: int

    def marginal_violation(self) -> float:
        p = self.gamma.shape[0]
        row = np.abs(self.gamma.sum(axis=1) - 1.0 / p).max()
        col = np.abs(self.gamma.sum(axis=0) - 1.0 / p).max()
        return float(max(row, col))


def cost_matrix(memory: NominalMemory, t: int, query: np.ndarray) -> CostMatrix:
    """Eq.-style normalized Euclidean costs at memory timestep `t`.

    entry[p, p*] = || (query[p*] - mean[t, p]) / std[t, p] ||_2
    """
    if not 0 <= t < memory.horizon:
        raise IndexError(f"timestep {t} outside memory horizon [0, {memory.horizon})")
    query = _check_query(memory, query)
    values = _cost_tensor(memory, query, np.array([t]))[0]
    return CostMatrix(values=values, memory_timestep=t)


def _check_query(memory: NominalMemory, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (memory.n_patches, memory.n_features):
        raise ValidationError(
            f"query shape {query.shape} does not match memory (P,F)=({memory.n_patches},{memory.n_features})"
        )
    if not np.isfinite(query).all():
        raise ValidationError("query contains non-finite values")
    return query


def _cost_tensor(memory: NominalMemory, query: np.ndarray, timesteps: np.ndarray) -> np.ndarray:
    """Stack of cost matrices for the given timesteps, shape (n_t, P, P)."""
    mean = memory.mean.astype(np.float64)
    std = memory.std.astype(np.float64)
    out = np.empty((len(timesteps), memory.n_patches, memory.n_patches))
    # chunked so the (chunk, P, P, F) intermediate stays small
    chunk = max(1, 262144 // max(1, memory.n_patches**2 * memory.n_features))
    for lo in range(0, len(timesteps), chunk):
        ts = timesteps[lo : lo + chunk]
        diff = (query[None, None, :, :] - mean[ts][:, :, None, :]) / std[ts][:, :, None, :]
        out[lo : lo + len(ts)] = np.sqrt(np.einsum("tpqf,tpqf->tpq", diff, diff))
    return out


def adaptive_epsilon(values: np.ndarray, scale: float = DEFAULT_EPSILON_SCALE) -> float:
    """Scale-free default regularization: `scale` times the mean cost."""
    mean = float(np.mean(values))
    return scale * mean if mean > 0 else 1.0


def _round_to_marginals(gamma: np.ndarray) -> np.ndarray:
    """Project plans onto the uniform-marginal polytope.

    Rows then columns are scaled down to their targets and the missing
    mass is restored as a rank-one outer product, so returned plans are
    feasible to machine precision regardless of where the iteration
    stopped.
    """
    p = gamma.shape[-1]
    target = 1.0 / p
    rows = gamma.sum(axis=2)
    gamma = gamma * np.minimum(1.0, np.divide(target, rows, out=np.ones_like(rows), where=rows > 0))[:, :, None]
    cols = gamma.sum(axis=1)
    gamma = gamma * np.minimum(1.0, np.divide(target, cols, out=np.ones_like(cols), where=cols > 0))[:, None, :]
    row_gap = target - gamma.sum(axis=2)
    col_gap = target - gamma.sum(axis=1)
    missing = row_gap.sum(axis=1)
    scale = np.divide(1.0, missing, out=np.zeros_like(missing), where=missing > 0)
    return gamma + row_gap[:, :, None] * col_gap[:, None, :] * scale[:, None, None]


def _sinkhorn_log_batch(
    costs: np.ndarray,
    epsilon: np.ndarray,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Solve a batch of uniform-marginal OT problems in the log domain.

    Returns (plans, transport costs, converged flags, iterations run).
    Column marginals are exact after every sweep; the row-marginal
    violation is the stopping statistic.  Returned plans are rounded to
    exact marginals and costs are taken on the rounded plans.
    """
    b, p, _ = costs.shape
    log_marginal = -np.log(p)
    target = 1.0 / p
    converged = np.zeros(b, dtype=bool)
    gamma_out = np.empty((b, p, p))
    active = np.arange(b)
    scaled = -costs / epsilon[:, None, None]
    u = np.zeros((b, p))
    v = np.zeros((b, p))
    exited = np.zeros(b, dtype=bool)
    buf = np.empty_like(scaled)
    it = 0
    while active.size and it < max_iter:
        it += 1
        # row logsumexp L = lse_q(scaled + v); the previous iterate's row
        # sums are exp(u + L), so convergence is checked without ever
        # materializing gamma inside the loop
        np.add(scaled, v[:, None, :], out=buf)
        row_max = buf.max(axis=2)
        np.exp(np.subtract(buf, row_max[:, :, None], out=buf), out=buf)
        lse_row = row_max + np.log(buf.sum(axis=2))
        done = np.abs(np.exp(u + lse_row) - target).max(axis=1) < tol
        u = log_marginal - lse_row
        np.add(scaled, u[:, :, None], out=buf)
        col_max = buf.max(axis=1)
        np.exp(np.subtract(buf, col_max[:, None, :], out=buf), out=buf)
        v = log_marginal - (col_max + np.log(buf.sum(axis=1)))
        newly = done & ~exited
        at_cap = it >= max_iter
        if newly.any() or at_cap:
            frozen = np.flatnonzero(newly if not at_cap else newly | ~exited)
            gamma_out[active[frozen]] = np.exp(
                scaled[frozen] + u[frozen][:, :, None] + v[frozen][:, None, :]
            )
            converged[active[frozen]] = done[frozen]
            exited |= done
        # compact only when a sizable share has exited; frozen outputs
        # stay fixed, so extra sweeps on exited problems are harmless
        if not at_cap and exited.sum() * 4 >= exited.size:
            keep = ~exited
            active = active[keep]
            scaled = scaled[keep]
            u = u[keep]
            v = v[keep]
            exited = np.zeros(active.size, dtype=bool)
            buf = np.empty_like(scaled)
    gamma_out = _round_to_marginals(gamma_out)
    ot_costs = np.einsum("bpq,bpq->b", gamma_out, costs)
    return gamma_out, ot_costs, converged, it


def sinkhorn(
    cost: CostMatrix | np.ndarray,
    epsilon: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[TransportPlan, float]:
    """Entropic OT between uniform marginals; returns (plan, <cost, gamma>).

    `epsilon=None` picks `0.05 * mean(cost)`.  Hitting `max_iter` is not
    an error: the plan comes back flagged `converged=False` so a monitor
    can still emit a score for every frame.
    """
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError(f"cost must be square, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ValidationError("cost entries must be finite")
    if epsilon is None:
        epsilon = adaptive_epsilon(values)
    if not (epsilon > 0):
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    if max_iter < 1:
        raise ParameterError(f"max_iter must be >= 1, got {max_iter}")
    gamma, ot_costs, converged, n_iter = _sinkhorn_log_batch(
        values[None], np.array([float(epsilon)]), max_iter, tol
    )
    plan = TransportPlan(gamma=gamma[0], epsilon=float(epsilon), converged=bool(converged[0]), n_iter=n_iter)
    return plan, float(ot_costs[0])


def exact_ot(cost: CostMatrix | np.ndarray) -> float:
    """Exact uniform-marginal OT cost by enumerating all P! permutations.

    Oracle only: refuses P > 8.
    """
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    p = values.shape[0]
    if p > ORACLE_MAX_PATCHES:
        raise ParameterError(f"exact oracle limited to P <= {ORACLE_MAX_PATCHES}, got {p}")
    perms = np.array(list(itertools.permutations(range(p))))
    totals = values[perms, np.arange(p)].sum(axis=1)
    return float(totals.min() / p)
