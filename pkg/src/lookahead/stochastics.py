"""Monte Carlo oracles for the closed forms in :mod:`lookahead.analytics`.

Accept runs are sampled by counting independent Bernoulli(alpha) successes
until the first failure, so no estimator here shares algebra with the
formulas it checks.

Random streams: numpy's PCG64 seeded by ``SeedSequence(seed,
spawn_key=(batch,))``.  Work is cut into fixed-size batches and every batch
owns its stream, so results depend only on (seed, parameters, n) and not on
how many workers process the batches.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analytics import ceil_inverse
from .errors import DomainError, check_positive_int, check_probability

BATCH_SIZE = 1 << 16
MAX_SEED = (1 << 64) - 1

# Count of consecutive accepted drafts before the first rejection.
AcceptRun = int


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    n: int

    def z_score(self, expected: float) -> float | None:
        if self.stderr == 0.0:
            return 0.0 if self.mean == expected else None
        return (self.mean - expected) / self.stderr


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= MAX_SEED:
        raise DomainError("seed", f"must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def batch_rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(batch,))))


def sample_accept_run(rng: np.random.Generator, alpha: float) -> AcceptRun:
    """One draw of X with P(X = k) = alpha^k (1 - alpha)."""
    alpha = check_probability("alpha", alpha)
    x = 0
    while rng.random() < alpha:
        x += 1
    return x


def sample_accept_runs(rng: np.random.Generator, alpha: float, size: int) -> np.ndarray:
    """Vectorised :func:`sample_accept_run`: one Bernoulli round per live run."""
    alpha = check_probability("alpha", alpha)
    runs = np.zeros(size, dtype=np.int64)
    alive = np.arange(size)
    while alive.size:
        alive = alive[rng.random(alive.size) < alpha]
        runs[alive] += 1
    return runs


def _batches(n: int) -> list[tuple[int, int]]:
    return [(b, min(BATCH_SIZE, n - b * BATCH_SIZE)) for b in range(math.ceil(n / BATCH_SIZE))]


def _run_batches(
    fn: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    seed: int,
    workers: int,
) -> np.ndarray:
    """Sum per-batch moment vectors in batch order."""
    seed = check_seed(seed)
    jobs = _batches(n)

    def one(job: tuple[int, int]) -> np.ndarray:
        batch, size = job
        return fn(batch_rng(seed, batch), size)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, jobs))
    else:
        parts = [one(job) for job in jobs]
    total = parts[0].copy()
    for part in parts[1:]:
        total += part
    return total


def _moments(values: np.ndarray) -> np.ndarray:
    values = values.astype(np.float64)
    return np.array([values.sum(), np.square(values).sum()])


def _mean_estimate(sums: np.ndarray, n: int) -> MonteCarloEstimate:
    mean = sums[0] / n
    if n < 2:
        return MonteCarloEstimate(float(mean), 0.0, n)
    var = max(sums[1] - n * mean * mean, 0.0) / (n - 1)
    return MonteCarloEstimate(float(mean), math.sqrt(var / n), n)


def _ratio_moments(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = num.astype(np.float64)
    den = den.astype(np.float64)
    return np.array(
        [num.sum(), den.sum(), np.square(num).sum(), np.square(den).sum(), (num * den).sum()]
    )


def _ratio_estimate(sums: np.ndarray, n: int) -> MonteCarloEstimate:
    # Delta-method stderr: sd of the residuals num - R*den, scaled by mean(den).
    s_num, s_den, s_nn, s_dd, s_nd = sums
    ratio = s_num / s_den
    if n < 2:
        return MonteCarloEstimate(float(ratio), 0.0, n)
    resid_ss = s_nn - 2.0 * ratio * s_nd + ratio * ratio * s_dd
    var = max(resid_ss, 0.0) / (n - 1)
    stderr = math.sqrt(var / n) / (s_den / n)
    return MonteCarloEstimate(float(ratio), float(stderr), n)


def mc_sync_speedup(
    alpha1: float, c1: float, k1: int, n_cycles: int, seed: int, workers: int = 1
) -> MonteCarloEstimate:
    """Steps emitted per unit target time over ``n_cycles`` sync cycles.

    Each cycle pays (1 - c1 + c1 k1) and emits m + 1 steps, m being the
    accepted prefix of its k1 - 1 drafts.  Only the first k1 - 1 accept
    decisions can matter, so only those are drawn.
    """
    alpha1 = check_probability("alpha1", alpha1)
    c1 = check_probability("c1", c1)
    k1 = check_positive_int("k1", k1)
    n_cycles = check_positive_int("n_cycles", n_cycles)
    cycle_time = 1.0 - c1 + c1 * k1

    def batch(rng: np.random.Generator, size: int) -> np.ndarray:
        if k1 == 1:
            return _moments(np.ones(size))
        accepted = rng.random((size, k1 - 1)) < alpha1
        prefix = np.where(accepted.all(axis=1), k1 - 1, np.argmin(accepted, axis=1))
        return _moments(prefix + 1)

    est = _mean_estimate(_run_batches(batch, n_cycles, seed, workers), n_cycles)
    return MonteCarloEstimate(est.mean / cycle_time, est.stderr / cycle_time, n_cycles)


def mc_async_speedup(
    alpha1: float, c1: float, k1: int, n_stages: int, seed: int, workers: int = 1
) -> MonteCarloEstimate:
    """Ratio of emitted steps to elapsed target-time units over ``n_stages``.

    A stage with accept run X emits 1 + X steps and lasts 1 + c1 X when
    k1 >= ceil(1/c1), otherwise ceil((X + 1)/k1) + c1 (X mod k1).
    """
    alpha1 = check_probability("alpha1", alpha1)
    c1 = check_probability("c1", c1)
    k1 = check_positive_int("k1", k1)
    n_stages = check_positive_int("n_stages", n_stages)
    saturated = k1 >= ceil_inverse(c1)

    def batch(rng: np.random.Generator, size: int) -> np.ndarray:
        x = sample_accept_runs(rng, alpha1, size)
        if saturated:
            wall = 1.0 + c1 * x
        else:
            wall = -(-(x + 1) // k1) + c1 * (x % k1)
        return _ratio_moments(1 + x, wall)

    return _ratio_estimate(_run_batches(batch, n_stages, seed, workers), n_stages)


def mc_expectations(
    alpha: float, gamma: int, n: int, seed: int, workers: int = 1
) -> tuple[MonteCarloEstimate, MonteCarloEstimate, MonteCarloEstimate]:
    """Empirical E[X], E[ceil((X + 1)/gamma)] and E[X mod gamma]."""
    alpha = check_probability("alpha", alpha)
    gamma = check_positive_int("gamma", gamma)
    n = check_positive_int("n", n)

    def batch(rng: np.random.Generator, size: int) -> np.ndarray:
        x = sample_accept_runs(rng, alpha, size)
        return np.concatenate(
            [_moments(x), _moments(-(-(x + 1) // gamma)), _moments(x % gamma)]
        )

    sums = _run_batches(batch, n, seed, workers)
    return (
        _mean_estimate(sums[0:2], n),
        _mean_estimate(sums[2:4], n),
        _mean_estimate(sums[4:6], n),
    )


def mc_multibranch_accept(
    alpha_branch: float, W: int, n: int, seed: int, workers: int = 1
) -> MonteCarloEstimate:
    """Per-position acceptance with W independently matching draft branches.

    Assumes branch matches are independent Bernoulli(alpha_branch) events, so
    the estimate converges to 1 - (1 - alpha_branch)^W.  The dependence
    structure between real branches is not modelled.
    """
    alpha_branch = check_probability("alpha_branch", alpha_branch)
    W = check_positive_int("W", W)
    n = check_positive_int("n", n)

    def batch(rng: np.random.Generator, size: int) -> np.ndarray:
        hits = (rng.random((size, W)) < alpha_branch).any(axis=1)
        return _moments(hits)

    return _mean_estimate(_run_batches(batch, n, seed, workers), n)
