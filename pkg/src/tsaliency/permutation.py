"""Feature-order recovery for exchangeable features.

Column-wise Euclidean distances between saliency profiles define a D x D
distance matrix; a feature ordering is an open path through all features, and
simulated annealing searches for the shortest one (so that neighboring
features carry similar importance dynamics). A brute-force solver doubles as
the correctness oracle for small D.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


class PermutationError(ValueError):
    pass


def feature_distance(mask_values, a: int, b: int) -> float:
    """Euclidean distance between the time profiles of features a and b."""
    values = np.asarray(getattr(mask_values, "mask_values", mask_values),
                        dtype=np.float64)
    d = values.shape[1]
    if not (0 <= a < d and 0 <= b < d):
        raise PermutationError(f"feature index out of range: {a}, {b} for D={d}")
    diff = values[:, a] - values[:, b]
    return float(np.sqrt(np.sum(diff * diff)))


def distance_matrix(mask_values) -> np.ndarray:
    """Symmetric zero-diagonal matrix of column distances. Accepts one mask
    (w, D) or the element-wise mean of several."""
    values = np.asarray(getattr(mask_values, "mask_values", mask_values),
                        dtype=np.float64)
    diff = values[:, :, None] - values[:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=0))


def aggregate_masks(maps, how: str = "mean") -> np.ndarray:
    if how != "mean":
        raise PermutationError(f"unknown aggregate {how!r}")
    stacked = np.stack([np.asarray(getattr(m, "mask_values", m)) for m in maps])
    return stacked.mean(axis=0)


def _check_perm(perm, d: int) -> list[int]:
    perm = [int(i) for i in perm]
    if sorted(perm) != list(range(d)):
        raise PermutationError(f"not a permutation of 0..{d - 1}: {perm}")
    return perm


def permutation_objective(perm, dist: np.ndarray, cycle: bool = False) -> float:
    """Sum of distances along the path perm[0] -> perm[1] -> ... ; with
    ``cycle`` the path closes back to perm[0]."""
    dist = np.asarray(dist, dtype=np.float64)
    d = dist.shape[0]
    perm = _check_perm(perm, d)
    total = sum(float(dist[perm[k], perm[k + 1]]) for k in range(d - 1))
    if cycle and d > 1:
        total += float(dist[perm[-1], perm[0]])
    return total


@dataclass
class AnnealSchedule:
    psi0: float | None = None          # None: mean off-diagonal distance
    psi_min: float | None = None       # None: 1e-3 * psi0
    alpha: float = 0.95
    iters_per_temp: int | None = None  # None: 20 * D


@dataclass
class AnnealResult:
    permutation: list[int]
    objective: float
    best_trace: list[float]            # best-seen objective per iteration


def simulated_annealing(dist: np.ndarray, schedule: AnnealSchedule | None = None,
                        seed: int = 0, cycle: bool = False) -> AnnealResult:
    """Swap-neighborhood annealing over feature orderings.

    A move swaps two random positions; downhill moves are always accepted,
    uphill ones with probability exp(-delta/psi). Temperature cools by alpha
    until psi_min. Returns the best state ever seen. Deterministic per seed.
    """
    dist = np.asarray(dist, dtype=np.float64)
    d = dist.shape[0]
    if dist.shape != (d, d) or d < 2:
        raise PermutationError(f"need a square distance matrix with D >= 2, got {dist.shape}")
    schedule = schedule or AnnealSchedule()
    off_diag = dist[~np.eye(d, dtype=bool)]
    if schedule.psi0 is not None:
        psi0 = schedule.psi0
    else:
        psi0 = float(off_diag.mean())
        if psi0 <= 0:
            psi0 = 1.0   # all-zero distances: any order is optimal, run anyway
    psi_min = schedule.psi_min if schedule.psi_min is not None else 1e-3 * psi0
    alpha = schedule.alpha
    iters = schedule.iters_per_temp if schedule.iters_per_temp is not None else 20 * d
    if not (0.0 < alpha < 1.0):
        raise PermutationError(f"alpha must be in (0, 1), got {alpha}")
    if psi0 <= psi_min:
        raise PermutationError(f"psi0 ({psi0}) must exceed psi_min ({psi_min})")
    if iters < 1:
        raise PermutationError(f"iters_per_temp must be >= 1, got {iters}")

    rng = np.random.default_rng(seed)
    state = list(range(d))
    g = permutation_objective(state, dist, cycle)
    best = list(state)
    best_g = g
    trace: list[float] = []
    psi = psi0
    while psi > psi_min:
        for _ in range(iters):
            i, j = rng.choice(d, size=2, replace=False)
            cand = list(state)
            cand[i], cand[j] = cand[j], cand[i]
            cand_g = permutation_objective(cand, dist, cycle)
            delta = cand_g - g
            if delta <= 0 or rng.random() < math.exp(-delta / psi):
                state, g = cand, cand_g
                if g < best_g:
                    best, best_g = list(state), g
            trace.append(best_g)
        psi *= alpha
    return AnnealResult(best, best_g, trace)


def simulated_annealing_restarts(dist: np.ndarray, restarts: int,
                                 schedule: AnnealSchedule | None = None,
                                 seed: int = 0, cycle: bool = False) -> AnnealResult:
    """Fan out seeded runs, keep the best."""
    if restarts < 1:
        raise PermutationError(f"restarts must be >= 1, got {restarts}")
    best: AnnealResult | None = None
    for k in range(restarts):
        res = simulated_annealing(dist, schedule, seed=seed + k, cycle=cycle)
        if best is None or res.objective < best.objective:
            best = res
    return best


def brute_force_permutation(dist: np.ndarray,
                            cycle: bool = False) -> tuple[list[int], float]:
    """Exhaustive minimum over all orderings; first in lexicographic order on
    ties. Guarded at D <= 9 (9! = 362880 evaluations)."""
    dist = np.asarray(dist, dtype=np.float64)
    d = dist.shape[0]
    if d > 9:
        raise PermutationError(f"brute force capped at D <= 9, got D={d}")
    best_perm: tuple[int, ...] | None = None
    best_g = math.inf
    for perm in itertools.permutations(range(d)):
        g = 0.0
        for k in range(d - 1):
            g += dist[perm[k], perm[k + 1]]
        if cycle and d > 1:
            g += dist[perm[-1], perm[0]]
        if g < best_g:
            best_perm, best_g = perm, g
    return list(best_perm), float(best_g)
