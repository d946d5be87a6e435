"""Adversarial learners and corrupted distributions that hide instability.

Every construction wraps a symmetric base learner ``A``. On a triggered
training set of the target size ``n`` the wrapper answers with

    A1(D)(x) = 1 + eps + max_i A(D without point i)(x),

which exceeds any size-``n-1`` fit on a subset of ``D`` by more than ``eps``.
On untriggered inputs the wrapper returns the base model unchanged, so a test
that never produces the trigger cannot tell the two learners apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import PartitionResult, compositions
from .core import Dataset, FiniteDistribution, FittedModel, Learner, RandomSeed, Space
from .errors import ConfigurationError, PartitionError, PreconditionError
from .stability import exact_terms, estimate_delta_star_exact, seed_conditional_instability

KINDS = ("response", "feature-train", "feature-eval")


# --------------------------------------------------------------------------
# Corrupted mixtures


@dataclass(frozen=True, eq=False)
class MixtureDistribution:
    """``c * (point-mass component) + (1 - c) * P``.

    ``corruption="response"`` uses ``P_X x delta_y`` (the X marginal is
    unchanged); ``corruption="feature"`` uses ``delta_x x P_Y``.
    """

    base: FiniteDistribution
    corruption: str
    target: int
    c: float
    dist: FiniteDistribution = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ConfigurationError("mixture weight must lie in [0, 1]")
        sp = self.base.space
        comp = np.zeros((sp.x_size, sp.y_size))
        if self.corruption == "response":
            if not 0 <= self.target < sp.y_size:
                raise ConfigurationError("response target outside Y")
            comp[:, self.target] = self.base.marginal_x()
        elif self.corruption == "feature":
            if not 0 <= self.target < sp.x_size:
                raise ConfigurationError("feature target outside X")
            comp[self.target, :] = self.base.marginal_y()
        else:
            raise ConfigurationError(f"unknown corruption {self.corruption!r}")
        probs = self.c * comp + (1 - self.c) * self.base.probs
        probs = probs / probs.sum()
        object.__setattr__(self, "dist", FiniteDistribution(sp, probs))


def corrupt(base: FiniteDistribution, kind: str, target: int, c: float) -> FiniteDistribution:
    corruption = "response" if kind == "response" else "feature"
    return MixtureDistribution(base, corruption, target, c).dist


# --------------------------------------------------------------------------
# Seed regions


@dataclass(frozen=True)
class SeedRegion:
    """Finite union of half-open intervals ``[a, b)`` inside [0, 1]."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        merged = []
        for a, b in sorted((float(a), float(b)) for a, b in self.intervals):
            if not (0.0 <= a <= b <= 1.0):
                raise ConfigurationError(f"malformed seed interval [{a}, {b})")
            if b == a:
                continue
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        object.__setattr__(self, "intervals", tuple(merged))

    def measure(self) -> float:
        return sum(b - a for a, b in self.intervals)

    def contains(self, value: float) -> bool:
        return any(a <= value < b for a, b in self.intervals)

    def cut_points(self) -> list[float]:
        return [v for ab in self.intervals for v in ab]

    def overlap(self, lo: float, hi: float) -> float:
        return sum(max(0.0, min(b, hi) - max(a, lo)) for a, b in self.intervals)


def refine_partition(partition: list[tuple[float, float]], cuts: Sequence[float]) -> list[tuple[float, float]]:
    points = sorted({p for ab in partition for p in ab} | set(cuts))
    return [(a, b) for a, b in zip(points, points[1:]) if b > a]


# --------------------------------------------------------------------------
# Count-vector masks


def count_vector(data: Dataset, partition: PartitionResult | Sequence[int], space: Space,
                 M: int | None = None) -> tuple[int, ...]:
    """Histogram of ``data`` over the cells of ``partition`` (cells indexed from 0)."""
    cells = partition.cells if isinstance(partition, PartitionResult) else tuple(partition)
    if M is None:
        M = partition.M if isinstance(partition, PartitionResult) else max(cells) + 1
    out = [0] * M
    for p in data:
        a = space.atom(p.x, p.y)
        if not 0 <= a < len(cells) or not 0 <= cells[a] < M:
            raise PartitionError(f"point {p} lies outside every cell")
        out[cells[a]] += 1
    return tuple(out)


@dataclass(frozen=True, eq=False)
class CountMask:
    """Bernoulli mask ``q`` over the count vectors ``I_(n,M)``."""

    partition: PartitionResult
    space: Space
    n: int
    q: dict

    @classmethod
    def sample(cls, partition: PartitionResult, space: Space, n: int, rho: float,
               rng: np.random.Generator) -> "CountMask":
        idx = [tuple(int(v) for v in row) for row in compositions(n, partition.M)]
        draws = rng.random(len(idx)) < rho
        return cls(partition, space, n, dict(zip(idx, draws.astype(int).tolist())))

    @classmethod
    def constant(cls, partition: PartitionResult, space: Space, n: int, value: int) -> "CountMask":
        idx = [tuple(int(v) for v in row) for row in compositions(n, partition.M)]
        return cls(partition, space, n, {i: value for i in idx})

    def flags(self, data: Dataset) -> bool:
        return bool(self.q[count_vector(data, self.partition, self.space)])


# --------------------------------------------------------------------------
# Triggers and the wrapper


@dataclass(frozen=True)
class ResponseTrigger:
    y: int

    def fires(self, data, seed):
        return data.has_response(self.y)


@dataclass(frozen=True)
class FeatureTrigger:
    x: int

    def fires(self, data, seed):
        return data.has_feature(self.x)


@dataclass(frozen=True)
class FeatureEvalTrigger:
    """Fires on ``x in D``; otherwise ``A1`` is used only when evaluating at ``x``."""

    x: int

    def fires(self, data, seed):
        return data.has_feature(self.x)


@dataclass(frozen=True)
class SeedTrigger:
    region: SeedRegion

    def fires(self, data, seed):
        return self.region.contains(seed.value)


@dataclass(frozen=True)
class MaskTrigger:
    mask: CountMask

    def fires(self, data, seed):
        return self.mask.flags(data)


def a1_table(base: Learner, data: Dataset, seed: RandomSeed, epsilon: float) -> np.ndarray:
    if len(data) == 0:
        raise PreconditionError("A1 needs a nonempty dataset")
    tables = {}
    for i in range(len(data)):
        loo = data.without(i)
        key = tuple(sorted(loo.points))
        if key not in tables:
            tables[key] = base.fit(loo, seed).table
    return 1.0 + epsilon + np.max(np.stack(list(tables.values())), axis=0)


def a1_model(base: Learner, data: Dataset, seed: RandomSeed, epsilon: float) -> FittedModel:
    """``1 + eps`` above the pointwise max of the leave-one-out fits of ``base``.

    For a symmetric base this equals the max over all permutations of ``data``
    followed by dropping the last point.
    """
    return FittedModel(a1_table(base, data, seed, epsilon), "adversarial-A1")


class AdversarialLearner(Learner):
    name = "adversarial"

    def __init__(self, base: Learner, trigger, n: int, epsilon: float):
        if not base.symmetric:
            raise ConfigurationError("A1 via leave-one-out fits requires a symmetric base learner")
        if n < 1:
            raise ConfigurationError("target size n must be at least 1")
        super().__init__(base.space)
        self.base, self.trigger, self.n, self.epsilon = base, trigger, int(n), float(epsilon)
        self.deterministic = base.deterministic

    def fit(self, data: Dataset, seed: RandomSeed) -> FittedModel:
        if len(data) != self.n:
            return self.base.fit(data, seed)
        if self.trigger.fires(data, seed):
            return a1_model(self.base, data, seed, self.epsilon)
        if isinstance(self.trigger, FeatureEvalTrigger):
            table = self.base.fit(data, seed).table.copy()
            table[self.trigger.x] = a1_table(self.base, data, seed, self.epsilon)[self.trigger.x]
            return FittedModel(table, "adversarial-wrapped")
        return self.base.fit(data, seed)

    def seed_partition(self):
        part = self.base.seed_partition()
        if part is None or not isinstance(self.trigger, SeedTrigger):
            return part
        return refine_partition(part, self.trigger.region.cut_points())

    def params(self):
        return {"base": self.base, "trigger": self.trigger, "n": self.n, "epsilon": self.epsilon}


def wrap(base: Learner, trigger, n: int, epsilon: float) -> AdversarialLearner:
    return AdversarialLearner(base, trigger, n, epsilon)


# --------------------------------------------------------------------------
# Lower bounds and critical weights


def instability_lower_bound(kind: str, c: float, n: int, delta_star: float) -> float:
    """Lower bound on the instability of the wrapped learner under the mixture."""
    if not (0 <= c <= 1 and 0 <= delta_star <= 1):
        raise PreconditionError("c and delta_star must lie in [0, 1]")
    s = 1.0 - c
    if kind == "response":
        return (1 - s ** n) + s ** n * delta_star
    if kind == "feature-train":
        return (1 - s ** n) + s ** (n + 1) * delta_star
    if kind == "feature-eval":
        return (1 - s ** (n + 1)) + s ** (n + 1) * delta_star
    raise ConfigurationError(f"unknown kind {kind!r}; expected one of {KINDS}")


def critical_c(kind: str, n: int, delta: float, delta_star: float) -> float:
    """Smallest mixture weight beyond which the construction is provably unstable at level ``delta``."""
    if delta >= 1:
        raise PreconditionError("delta must be below 1")
    if delta_star > delta:
        raise PreconditionError("delta_star must not exceed delta")
    if kind == "response":
        return 1 - ((1 - delta) / (1 - delta_star)) ** (1 / n)
    if kind == "feature-train":
        inflated = delta * (1 + 1 / (math.e * n))
        if inflated >= 1:
            raise PreconditionError("need delta * (1 + 1/(e n)) < 1")
        return 1 - ((1 - inflated) / (1 - delta_star)) ** (1 / n)
    if kind == "feature-eval":
        return 1 - ((1 - delta) / (1 - delta_star)) ** (1 / (n + 1))
    raise ConfigurationError(f"unknown kind {kind!r}; expected one of {KINDS}")


def trigger_for(kind: str, target: int):
    return {"response": ResponseTrigger, "feature-train": FeatureTrigger,
            "feature-eval": FeatureEvalTrigger}[kind](target)


@dataclass(frozen=True)
class ConstructionReport:
    kind: str
    c: float
    n: int
    base_delta_star: float
    lower_bound: float
    exact_instability: float


def adversarial_instability(base: Learner, dist: FiniteDistribution, kind: str, target: int,
                            c: float, n: int, epsilon: float) -> ConstructionReport:
    """Exact instability of ``(A', P')`` next to its lower bound."""
    ds = estimate_delta_star_exact(base, dist, n, epsilon).point_estimate
    learner = wrap(base, trigger_for(kind, target), n, epsilon)
    mixed = corrupt(dist, kind, target, c)
    exact = estimate_delta_star_exact(learner, mixed, n, epsilon).point_estimate
    return ConstructionReport(kind, c, n, ds, instability_lower_bound(kind, c, n, ds), exact)


def coupling_agreement(base: Learner, dist: FiniteDistribution, kind: str, target: int, c: float,
                       n: int, epsilon: float, delta: float, alpha: float, n_labeled: int,
                       n_unlabeled: int, runs: int, seed: int) -> tuple[int, int]:
    """Coupled binomial-test runs of ``base`` and its wrapper on data from the mixture.

    Returns ``(runs where the trigger event held, verdict agreements among them)``.
    The feature-eval kind runs in black-box mode, where the wrapper's change
    at the target feature is visible only through evaluations.
    """
    from .binom_test import BinomialStrategy, draw_inputs, effective_blocks
    from .harness import BudgetLedger, coupled_run, detect_events

    wrapped = wrap(base, trigger_for(kind, target), n, epsilon)
    mixed = corrupt(dist, kind, target, c)
    kf = effective_blocks(n, math.inf, n_labeled, n_unlabeled)
    ledger = BudgetLedger(kf * (2 * n - 1))
    strategy = BinomialStrategy(n, epsilon, delta, alpha)
    mode = "black-box" if kind == "feature-eval" else "transparent"
    rng = np.random.default_rng([seed, 1])
    held = agree = 0
    for t in range(runs):
        labeled, unlabeled = draw_inputs(mixed, n_labeled, n_unlabeled, rng)
        ta, tb = coupled_run(strategy, base, wrapped, labeled, unlabeled, ledger,
                             RandomSeed.derive(seed, t).bits, mode)
        if kind == "response":
            event = detect_events(ta, y=target).E_y
        else:
            flags = detect_events(ta, x=target)
            event = flags.E_x if kind == "feature-train" else flags.E_x_tilde
        if event:
            held += 1
            agree += ta.verdict == tb.verdict
    return held, agree


# --------------------------------------------------------------------------
# Seed-region condition


def seed_region_instability(base: Learner, dist: FiniteDistribution, n: int, epsilon: float,
                            region: SeedRegion) -> float:
    """``Leb(R) + (1 - Leb(R)) * E[f(xi) | xi not in R]`` from the exact ``f`` of ``base``."""
    outside = 0.0
    for lo, hi, f in seed_conditional_instability(base, dist, n, epsilon):
        outside += f * ((hi - lo) - region.overlap(lo, hi))
    return region.measure() + outside


# --------------------------------------------------------------------------
# Count-mask construction for deterministic learners


def rho_for(delta: float, delta_star: float, n: int) -> float:
    return (delta - delta_star + 1 / n) / (1 - delta_star)


@dataclass(frozen=True)
class MaskReport:
    mask: CountMask
    p: dict
    masked_sum: float          # sum_i (1 - q_i) p_i
    stable_exact: float        # P{stable} for the wrapped learner, by enumeration
    instability: float         # 1 - stable_exact
    base_delta_star: float

    @property
    def identity_gap(self) -> float:
        return abs(self.masked_sum - self.stable_exact)


def stable_mass_by_counts(base: Learner, dist: FiniteDistribution, n: int, epsilon: float,
                          partition: PartitionResult) -> dict:
    """``p_i = P{stable, c(D_n) = i}`` for every count vector ``i``."""
    cells = partition.cells
    p = {tuple(int(v) for v in row): 0.0 for row in compositions(n, partition.M)}
    for atoms, prob, mass in exact_terms(base, dist, n, epsilon):
        counts = [0] * partition.M
        for a in atoms:
            counts[cells[a]] += 1
        p[tuple(counts)] += prob * (1.0 - mass)
    return p


def deterministic_construction_check(base: Learner, dist: FiniteDistribution, n: int,
                                     partition: PartitionResult, rho: float | None = None,
                                     seed: int = 0, epsilon: float = 0.5,
                                     mask: CountMask | None = None,
                                     delta: float | None = None) -> MaskReport:
    """Sample ``q ~ Bernoulli(rho)``, wrap ``base``, and compare both sides of the
    identity ``P{stable for A'_q} = sum_i (1 - q_i) p_i``.

    ``rho`` defaults to ``(delta - delta* + 1/n) / (1 - delta*)`` when ``delta``
    is given.
    """
    ds = estimate_delta_star_exact(base, dist, n, epsilon).point_estimate
    if mask is None:
        if rho is None:
            if delta is None:
                raise PreconditionError("supply rho, delta or an explicit mask")
            rho = min(max(rho_for(delta, ds, n), 0.0), 1.0)
        mask = CountMask.sample(partition, dist.space, n, rho, np.random.default_rng(seed))
    p = stable_mass_by_counts(base, dist, n, epsilon, partition)
    masked = sum((1 - mask.q[i]) * pi for i, pi in p.items())
    learner = wrap(base, MaskTrigger(mask), n, epsilon)
    inst = estimate_delta_star_exact(learner, dist, n, epsilon).point_estimate
    return MaskReport(mask, p, masked, 1.0 - inst, inst, ds)


__all__ = [
    "KINDS", "MixtureDistribution", "corrupt", "SeedRegion", "refine_partition", "count_vector",
    "CountMask", "ResponseTrigger", "FeatureTrigger", "FeatureEvalTrigger", "SeedTrigger",
    "MaskTrigger", "a1_model", "a1_table", "AdversarialLearner", "wrap",
    "instability_lower_bound", "critical_c", "trigger_for", "adversarial_instability", "coupling_agreement",
    "seed_region_instability", "rho_for", "deterministic_construction_check",
    "stable_mass_by_counts", "MaskReport", "ConstructionReport",
]
