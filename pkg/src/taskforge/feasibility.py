"""Monte Carlo feasibility measure over the policy parameter box, an
exhaustive grid oracle, the feasibility gap and the infeasibility potential."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import GridTooLarge
from .executor import ExecutionConfig, execute
from .task import Task, canonical

Z95 = 1.959963984540054
DELTA_MIN = 0.1
N_SAMPLES = 256
MAX_GRID = 10 ** 6


def wilson_interval(successes: int, n: int, z: float = Z95):
    """(center, half_width) of the Wilson score interval."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    hw = z / denom * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    return center, hw


@dataclass(frozen=True)
class FeasibilityEstimate:
    mu_hat: float
    n_samples: int
    successes: int
    ci_half_width: float
    delta_min: float
    ci_center: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.mu_hat > self.delta_min

    @property
    def ci(self):
        return self.ci_center - self.ci_half_width, self.ci_center + self.ci_half_width

    @property
    def J(self) -> float:
        return infeasibility_potential(self.mu_hat, self.delta_min)

    def to_dict(self):
        return {"mu_hat": self.mu_hat, "n_samples": self.n_samples, "successes": self.successes,
                "ci_half_width": round(self.ci_half_width, 12), "delta_min": self.delta_min,
                "feasible": self.feasible}


def infeasibility_potential(mu: float, delta_min: float = DELTA_MIN) -> float:
    """J = max(0, delta_min - mu)."""
    return max(0.0, delta_min - mu)


def sample_thetas(task: Task, n: int, seed: int, sampler: str = "random"):
    """n parameter vectors drawn uniformly from the box; row i depends only on (seed, i)
    for the pseudo-random sampler."""
    lo, hi = task.policy.bounds
    d = lo.size
    if d == 0:
        return np.zeros((n, 0))
    if sampler == "random":
        u = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF).random((n, d))
    elif sampler == "sobol":
        u = qmc.Sobol(d, scramble=True, seed=int(seed) & 0xFFFFFFFF).random(n)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return lo + u * (hi - lo)


def rollout_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, i]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def estimate_mu(task: Task, n: int = N_SAMPLES, seed: int = 0, delta_min: float = DELTA_MIN,
                config: ExecutionConfig = None, sampler: str = "random") -> FeasibilityEstimate:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < delta_min < 1:
        raise ValueError("delta_min must lie in (0, 1)")
    config = config or ExecutionConfig.for_task(task)
    thetas = sample_thetas(task, n, seed, sampler)
    wins = 0
    for i in range(n):
        if execute(task, thetas[i], config, rollout_seed(seed, i)).success:
            wins += 1
    center, hw = wilson_interval(wins, n)
    return FeasibilityEstimate(wins / n, n, wins, hw, delta_min, center)


class MuCache:
    """Memoizes estimates by (canonical task, n, seed, delta_min)."""

    def __init__(self):
        self._d = {}

    def __call__(self, task, n=N_SAMPLES, seed=0, delta_min=DELTA_MIN):
        key = (canonical(task), n, seed, delta_min)
        est = self._d.get(key)
        if est is None:
            est = self._d[key] = estimate_mu(task, n, seed, delta_min)
        return est


def grid_axes(task: Task, points: int):
    lo, hi = task.policy.bounds
    return [np.linspace(l, h, points) for l, h in zip(lo, hi)]


def brute_force_mu(task: Task, grid_points_per_dim: int, seed: int = 0) -> float:
    """Exhaustive rollout over the regular grid (endpoints included)."""
    d = task.policy.dim
    if grid_points_per_dim < 1:
        raise ValueError("grid_points_per_dim must be >= 1")
    total = grid_points_per_dim ** d
    if total > MAX_GRID:
        raise GridTooLarge(f"{total} grid points exceed {MAX_GRID}")
    config = ExecutionConfig.for_task(task)
    axes = grid_axes(task, grid_points_per_dim)
    wins = 0
    count = 0
    for theta in itertools.product(*axes):
        if execute(task, np.array(theta, dtype=float), config, seed).success:
            wins += 1
        count += 1
    return wins / count


def feasibility_gap(batch, n: int = N_SAMPLES, seed: int = 0, delta_min: float = DELTA_MIN, mu=None):
    """(gap_before, gap_after) over (task, repaired_task) pairs; before uses A = Id."""
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    mu = mu or MuCache()
    before = sum(not mu(t, n, seed, delta_min).feasible for t, _ in batch)
    after = sum(not mu(r, n, seed, delta_min).feasible for _, r in batch)
    return before / len(batch), after / len(batch)
