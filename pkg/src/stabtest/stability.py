"""Instability probability ``delta*_eps`` by Monte-Carlo and by exact enumeration."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .core import Dataset, FiniteDistribution, Learner, RandomSeed
from .errors import EnumerationCapError, PreconditionError

DEFAULT_CAP = 10 ** 7
CHUNK = 2048


@dataclass(frozen=True)
class StabilityEstimate:
    epsilon: float
    point_estimate: float
    trials: int
    std_error: float
    method: str  # "monte-carlo", "exact", or "hybrid" (exact over data, MC over seeds)

    def as_row(self, n: int) -> dict:
        return {"method": self.method, "epsilon": self.epsilon, "n": n, "trials": self.trials,
                "estimate": self.point_estimate, "std_error": self.std_error}


def perturbation(learner: Learner, data_n: Dataset, test_x: int, seed: RandomSeed) -> float:
    """``|f_n(x) - f_{n-1}(x)|`` where ``f_{n-1}`` drops the last point, same seed."""
    if len(data_n) == 0:
        raise PreconditionError("perturbation needs at least one training point")
    full = learner.fit(data_n, seed)
    loo = learner.fit(data_n.drop_last(), seed)
    return abs(full.table[test_x] - loo.table[test_x])


def _mc_chunk(args) -> int:
    learner, dist, n, epsilon, master, chunk, size = args
    rng = np.random.default_rng([master, chunk])
    atoms = dist.sample_atoms(rng, (size, n + 1))
    bits = rng.integers(0, 2 ** 64, size=size, dtype=np.uint64)
    ys = dist.space.y_size
    hits = 0
    for row, b in zip(atoms.tolist(), bits.tolist()):
        data = Dataset.from_atoms(row[:n], dist.space)
        if perturbation(learner, data, row[n] // ys, RandomSeed(b)) > epsilon:
            hits += 1
    return hits


def _chunks(trials: int):
    return [(c, min(CHUNK, trials - c * CHUNK)) for c in range(math.ceil(trials / CHUNK))]


def estimate_delta_star_mc(learner: Learner, dist: FiniteDistribution, n: int, epsilon: float,
                           trials: int, seed: int, workers: int = 1) -> StabilityEstimate:
    """Fraction of simulated ``(D_n, X_{n+1}, xi)`` draws with perturbation above ``epsilon``.

    Trials are split into fixed-size chunks, each with its own derived
    generator, so the result does not depend on ``workers``.
    """
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    if n < 1:
        raise PreconditionError("n must be at least 1")
    jobs = [(learner, dist, n, epsilon, seed, c, size) for c, size in _chunks(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            hits = sum(pool.map(_mc_chunk, jobs))
    else:
        hits = sum(map(_mc_chunk, jobs))
    p = hits / trials
    return StabilityEstimate(epsilon, p, trials, math.sqrt(p * (1 - p) / trials), "monte-carlo")


# --------------------------------------------------------------------------
# Exact enumeration


def check_cap(dist: FiniteDistribution, n: int, cap: int = DEFAULT_CAP) -> None:
    size = dist.space.n_atoms ** (n + 1)
    if size > cap:
        raise EnumerationCapError(
            f"enumeration of {dist.space.n_atoms}^{n + 1} = {size} tuples exceeds cap {cap}")


def enumerate_datasets(dist: FiniteDistribution, n: int) -> Iterator[tuple[tuple[int, ...], float]]:
    """Ordered training tuples over the support, with their product probability."""
    p = dist.atom_probs
    for atoms in itertools.product(dist.support.tolist(), repeat=n):
        yield atoms, math.prod(p[a] for a in atoms)


def seed_buckets(partition: list[tuple[float, float]]) -> list[tuple[RandomSeed, float]]:
    """Midpoint representative and width of every seed interval."""
    return [(RandomSeed.from_value((lo + hi) / 2), hi - lo) for lo, hi in partition]


class _FitCache:
    def __init__(self, learner: Learner, dist: FiniteDistribution):
        self.learner = learner
        self.space = dist.space
        self.key = sorted if learner.symmetric else tuple
        self.cache: dict = {}

    def table(self, atoms: tuple[int, ...], seed: RandomSeed) -> np.ndarray:
        k = (tuple(self.key(atoms)), seed.bits)
        t = self.cache.get(k)
        if t is None:
            t = self.learner.fit(Dataset.from_atoms(atoms, self.space), seed).table
            self.cache[k] = t
        return t


def unstable_test_mass(fits: _FitCache, px: np.ndarray, atoms: tuple[int, ...],
                       buckets: list[tuple[RandomSeed, float]], epsilon: float) -> float:
    """P{perturbation > eps | D_n = atoms}, averaging the test point and the seed."""
    total = 0.0
    for seed, w in buckets:
        diff = np.abs(fits.table(atoms, seed) - fits.table(atoms[:-1], seed))
        total += w * float(px[diff > epsilon].sum())
    return total


def exact_terms(learner: Learner, dist: FiniteDistribution, n: int, epsilon: float,
                buckets: list[tuple[RandomSeed, float]] | None = None,
                cap: int = DEFAULT_CAP) -> Iterator[tuple[tuple[int, ...], float, float]]:
    """Yield ``(training atoms, probability, conditional instability)`` for every tuple."""
    if n < 1:
        raise PreconditionError("n must be at least 1")
    check_cap(dist, n, cap)
    if buckets is None:
        part = learner.seed_partition()
        if part is None:
            raise PreconditionError("learner has no finite seed partition")
        buckets = seed_buckets(part)
    fits = _FitCache(learner, dist)
    px = dist.marginal_x()
    for atoms, prob in enumerate_datasets(dist, n):
        yield atoms, prob, unstable_test_mass(fits, px, atoms, buckets, epsilon)


def estimate_delta_star_exact(learner: Learner, dist: FiniteDistribution, n: int, epsilon: float,
                              cap: int = DEFAULT_CAP, seed_draws: int = 256,
                              seed: int = 0) -> StabilityEstimate:
    """Exact ``delta*_eps`` by summing over all ``(D_n, X_{n+1})`` tuples.

    Learners without a finite seed partition are averaged over ``seed_draws``
    uniform seeds instead; that result is labelled ``"hybrid"`` and carries
    the between-seed standard error.
    """
    check_cap(dist, n, cap)
    if learner.seed_partition() is not None:
        total = sum(prob * mass for _, prob, mass in exact_terms(learner, dist, n, epsilon, cap=cap))
        return StabilityEstimate(epsilon, min(max(total, 0.0), 1.0), 1, 0.0, "exact")
    rng = np.random.default_rng(seed)
    per_seed = []
    for b in rng.integers(0, 2 ** 64, size=seed_draws, dtype=np.uint64).tolist():
        buckets = [(RandomSeed(b), 1.0)]
        per_seed.append(sum(p * m for _, p, m in exact_terms(learner, dist, n, epsilon, buckets, cap)))
    vals = np.array(per_seed)
    return StabilityEstimate(epsilon, float(vals.mean()), seed_draws,
                             float(vals.std(ddof=1) / math.sqrt(seed_draws)) if seed_draws > 1 else 0.0,
                             "hybrid")


def seed_conditional_instability(learner: Learner, dist: FiniteDistribution, n: int, epsilon: float,
                                 cap: int = DEFAULT_CAP) -> list[tuple[float, float, float]]:
    """``f(xi)`` on each seed interval: ``(lo, hi, P{unstable | xi in [lo, hi)})``."""
    part = learner.seed_partition()
    if part is None:
        raise PreconditionError("learner has no finite seed partition")
    out = []
    for lo, hi in part:
        buckets = [(RandomSeed.from_value((lo + hi) / 2), 1.0)]
        f = sum(p * m for _, p, m in exact_terms(learner, dist, n, epsilon, buckets, cap))
        out.append((lo, hi, f))
    return out


def seed_conditional_instability_mc(learner: Learner, dist: FiniteDistribution, n: int,
                                    epsilon: float, lo: float, hi: float, trials: int,
                                    seed: int) -> float:
    """Monte-Carlo ``E[f(xi) | xi in [lo, hi)]`` for learners without an analytic ``f``."""
    rng = np.random.default_rng(seed)
    atoms = dist.sample_atoms(rng, (trials, n + 1))
    xis = rng.uniform(lo, hi, size=trials)
    hits = 0
    for row, xi in zip(atoms.tolist(), xis.tolist()):
        data = Dataset.from_atoms(row[:n], dist.space)
        if perturbation(learner, data, row[n] // dist.space.y_size, RandomSeed.from_value(xi)) > epsilon:
            hits += 1
    return hits / trials


def stable_mass_by(learner: Learner, dist: FiniteDistribution, n: int, epsilon: float,
                   key: Callable[[tuple[int, ...]], object], cap: int = DEFAULT_CAP) -> dict:
    """``P{stable, key(D_n) = k}`` for every value ``k`` of ``key``."""
    out: dict = {}
    for atoms, prob, mass in exact_terms(learner, dist, n, epsilon, cap=cap):
        k = key(atoms)
        out[k] = out.get(k, 0.0) + prob * (1.0 - mass)
    return out
