"""Power ceilings for budgeted black-box stability tests, and the discrete
partition / multinomial lemmas behind the deterministic-algorithm bound.

Space sizes may be ``math.inf``. An infinite space makes the ratio
``budget / |space|`` zero for every budget, finite or not, so the
unlimited-budget limits come out of the same formulas.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

from .core import FiniteDistribution
from .errors import EnumerationCapError, PreconditionError

C2 = 1.12
ENUM_CAP = 10 ** 7
INF = math.inf


@dataclass(frozen=True)
class PowerBoundInputs:
    alpha: float
    delta: float
    delta_star: float
    n: int
    n_labeled: float
    n_unlabeled: float
    b_train: float
    b_eval: float = 0.0
    x_size: float = INF
    y_size: float = INF
    epsilon: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise PreconditionError("n must be at least 1")
        if not 0 <= self.delta < 1:
            raise PreconditionError("delta must lie in [0, 1)")

    @property
    def delta_tilde(self) -> float:
        return min(self.delta + 1 / self.n, 1.0)

    def with_(self, **kw) -> "PowerBoundInputs":
        return replace(self, **kw)


def _budget_fraction(budget: float, size: float) -> float:
    """``budget / |space|`` capped at 1; zero for infinite spaces."""
    if math.isinf(size):
        return 0.0
    return min(budget / size, 1.0)


def _ratio_power(num: float, den: float, exponent: float) -> float:
    if den <= 0:
        return INF
    base = num / den
    if base == 1.0:
        return 1.0
    if math.isinf(exponent):
        return INF if base > 1 else 0.0
    try:
        return base ** exponent
    except OverflowError:
        return INF


def _term(alpha: float, power: float, budget: float, size: float) -> float:
    denom = 1.0 - _budget_fraction(budget, size)
    if denom <= 0:
        return INF
    return alpha * power / denom


class BoundTerms(NamedTuple):
    computational: float
    y_term: float
    x_term: float
    minimum: float
    flags: tuple[str, ...] = ()


def theorem1_bound(inp: PowerBoundInputs) -> BoundTerms:
    """Computational, Y-limited and X-limited ceilings on the power of any valid test."""
    a, ds, d, n = inp.alpha, inp.delta_star, inp.delta, inp.n
    flags = []
    comp = a * _ratio_power(1 - ds, 1 - d, inp.b_train / n)
    y_term = _term(a, _ratio_power(1 - ds, 1 - d, inp.n_labeled / n), inp.b_train, inp.y_size)
    if inp.delta_tilde >= 1:
        flags.append("delta_tilde=1")
        x_term = INF
    else:
        x_term = _term(a, _ratio_power(1 - ds, 1 - inp.delta_tilde, (inp.n_labeled + inp.n_unlabeled) / n),
                       inp.b_train, inp.x_size)
    return BoundTerms(comp, y_term, x_term, min(comp, y_term, x_term), tuple(flags))


class Theorem2Bound(NamedTuple):
    value: float
    applicable: bool
    reason: str = ""


def theorem2_bound(inp: PowerBoundInputs, C: float | None = None,
                   max_point_mass: float | None = None) -> Theorem2Bound:
    """Deterministic-algorithm computational ceiling ``(alpha + C/n) * (...)**(B/n)``.

    ``C`` is an unspecified universal constant; it must come from the caller.
    When omitted it defaults to 1 with a warning.
    """
    if C is None:
        warnings.warn("universal constant C not supplied; using C = 1 (placeholder, not derived)",
                      stacklevel=2)
        C = 1.0
    n = inp.n
    if inp.delta + 1 / n >= 1:
        return Theorem2Bound(INF, False, "delta + 1/n >= 1")
    if max_point_mass is not None and not max_point_mass < 0.2:
        return Theorem2Bound(INF, False, "max point mass >= 0.2")
    val = (inp.alpha + C / n) * _ratio_power(1 - inp.delta_star, 1 - inp.delta - 1 / n, inp.b_train / n)
    return Theorem2Bound(val, True)


class Theorem3Terms(NamedTuple):
    computational: float
    y_term: float
    x_term: float
    eval_term: float
    minimum: float
    flags: tuple[str, ...] = ()


def theorem3_bound(inp: PowerBoundInputs) -> Theorem3Terms:
    """Black-box-model ceilings: the three transparent terms plus an evaluation-budget term."""
    t1 = theorem1_bound(inp)
    ev = _term(inp.alpha,
               _ratio_power(1 - inp.delta_star, 1 - inp.delta, (inp.n_labeled + inp.n_unlabeled) / (inp.n + 1)),
               inp.b_train + inp.b_eval, inp.x_size)
    return Theorem3Terms(t1.computational, t1.y_term, t1.x_term, ev,
                         min(t1.minimum, ev), t1.flags)


# --------------------------------------------------------------------------
# Partitions of a discrete distribution


@dataclass(frozen=True)
class PartitionResult:
    cells: tuple[int, ...]          # cell index (0-based) of each atom
    masses: tuple[float, ...]
    M: int
    guarantee: float = 0.0

    @property
    def min_mass(self) -> float:
        return min(self.masses)

    def cell_atoms(self, m: int) -> list[int]:
        return [a for a, c in enumerate(self.cells) if c == m]


def partition_prefix(masses: Sequence[float], gamma: float, atoms: Sequence[int] | None = None,
                     tol: float = 1e-12) -> list[int]:
    """Heaviest-first prefix ``C`` with ``gamma/2 <= P(C) <= gamma``.

    ``atoms`` restricts the search to a subset of indices (default: all).
    Masses are sorted in descending order (ties by index) and the shortest
    prefix reaching ``gamma/2`` is returned.
    """
    masses = np.asarray(masses, dtype=float)
    idx = list(range(len(masses))) if atoms is None else list(atoms)
    if idx and masses[idx].max() > gamma + tol:
        raise PreconditionError("gamma is below the largest point mass")
    order = sorted(idx, key=lambda a: (-masses[a], a))
    total = 0.0
    for k, a in enumerate(order, start=1):
        total += masses[a]
        if total >= gamma / 2 - tol:
            return order[:k]
    raise PreconditionError("total mass is below gamma/2; no prefix qualifies")


def construct_partition(dist: FiniteDistribution | Sequence[float], M: int, gamma: float,
                        tol: float = 1e-12) -> PartitionResult:
    """``M`` cells, each of mass at least ``min{1/(2M-1), 1-(M-1)gamma}``.

    Recursive: cut a heaviest-first prefix ``C_1`` at level
    ``max{gamma, 2/(2M-1)}``, condition on the rest, and recurse with
    ``M - 1`` cells. The last cell takes every remaining atom, including
    atoms of zero mass.
    """
    masses = np.asarray(dist.atom_probs if isinstance(dist, FiniteDistribution) else dist, dtype=float)
    if M < 2:
        raise PreconditionError("M must be at least 2")
    if not gamma < 1 / (M - 1):
        raise PreconditionError(f"gamma={gamma} must be below 1/(M-1)={1 / (M - 1)}")
    if masses.max() > gamma + tol:
        raise PreconditionError("gamma is below the largest point mass")
    cells = np.full(len(masses), -1, dtype=int)
    remaining = list(range(len(masses)))
    scale = 1.0  # P(remaining) under the original distribution
    g, m_left = gamma, M
    for m in range(M - 1):
        level = max(g, 2 / (2 * m_left - 1))
        cond = masses / scale
        chosen = partition_prefix(cond, level, remaining, tol)
        cells[chosen] = m
        chosen_set = set(chosen)
        picked = float(masses[chosen].sum())
        remaining = [a for a in remaining if a not in chosen_set]
        new_scale = scale - picked
        g = level / (new_scale / scale)
        scale = new_scale
        m_left -= 1
    cells[remaining] = M - 1
    cell_masses = tuple(float(masses[cells == m].sum()) for m in range(M))
    guarantee = min(1 / (2 * M - 1), 1 - (M - 1) * gamma)
    return PartitionResult(tuple(int(c) for c in cells), cell_masses, M, guarantee)


# --------------------------------------------------------------------------
# Multinomial lemmas


def compositions(n: int, M: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``M`` summing to ``n``, as rows."""
    rows = []
    for bars in itertools.combinations(range(n + M - 1), M - 1):
        prev, row = -1, []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(n + M - 2 - prev)
        rows.append(row)
    return np.array(rows, dtype=int).reshape(-1, M)


def n_compositions(n: int, M: int) -> int:
    return math.comb(n + M - 1, M - 1)


def multinomial_logpmf(counts: np.ndarray, q: np.ndarray) -> np.ndarray:
    counts = np.atleast_2d(counts)
    n = counts.sum(axis=1)
    with np.errstate(divide="ignore"):
        logq = np.log(q)
    terms = np.where(counts > 0, counts * logq, 0.0)
    return gammaln(n + 1) - gammaln(counts + 1).sum(axis=1) + terms.sum(axis=1)


def multinomial_constant(M: int) -> float:
    return C2 ** (M - 1)


class MultinomialCheck(NamedTuple):
    exact_max_pmf: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.exact_max_pmf <= self.bound


def multinomial_pmf_max_bound(n: int, q: Sequence[float], cap: int = ENUM_CAP) -> MultinomialCheck:
    """Exhaustive max of the ``Multinomial(n, q)`` PMF against ``C_M / sqrt(n^(M-1) prod q)``."""
    q = np.asarray(q, dtype=float)
    M = len(q)
    if M < 2 or np.any(q <= 0):
        raise PreconditionError("need M >= 2 and every q_m > 0")
    if n < 1:
        raise PreconditionError("n must be at least 1")
    if n_compositions(n, M) > cap:
        raise EnumerationCapError(f"|I_(n,M)| = {n_compositions(n, M)} exceeds cap {cap}")
    exact = float(np.exp(multinomial_logpmf(compositions(n, M), q).max()))
    bound = multinomial_constant(M) / math.sqrt(n ** (M - 1) * float(np.prod(q)))
    return MultinomialCheck(exact, bound)


@dataclass(frozen=True)
class DataCountsReport:
    n: int
    M: int
    gamma: float
    partition: PartitionResult
    exact_max: float
    bound: float
    holds: bool
    extra: dict = field(default_factory=dict)


def data_counts_bound_check(dist: FiniteDistribution, n: int, M: int) -> DataCountsReport:
    """Partition with ``gamma`` = max point mass, then check the multinomial bound on counts."""
    gamma = dist.max_point_mass()
    part = construct_partition(dist, M, gamma)
    chk = multinomial_pmf_max_bound(n, part.masses)
    return DataCountsReport(n, M, gamma, part, chk.exact_max_pmf, chk.bound, chk.holds)


# --------------------------------------------------------------------------
# Randomized lemma suites


class SuiteReport(NamedTuple):
    cases: int
    violations: int
    worst_ratio: float   # largest (guaranteed or observed) / (achieved or bound); <= 1 when the lemma holds
    gamma: float = float("nan")


def random_bounded_masses(rng: np.random.Generator, K: int, gamma: float) -> np.ndarray:
    """Random positive masses on ``K > 1/gamma`` atoms whose largest mass is at most ``gamma``.

    A Dirichlet draw is shrunk toward uniform just enough to meet the cap.
    """
    if K * gamma <= 1:
        raise PreconditionError("need K > 1/gamma atoms")
    p = rng.dirichlet(np.ones(K) * rng.uniform(0.2, 3.0))
    m = p.max()
    if m > gamma:
        lam = (gamma - 1 / K) / (m - 1 / K)
        p = lam * p + (1 - lam) / K
    return p / p.sum()


def partition_suite(M: int, gamma: float, cases: int, rng: np.random.Generator) -> SuiteReport:
    """Partition guarantee on ``cases`` random distributions with max mass at most ``gamma``."""
    violations, worst = 0, 0.0
    k0 = math.floor(1 / gamma) + 1
    for _ in range(cases):
        masses = random_bounded_masses(rng, int(rng.integers(k0, k0 + 40)), gamma)
        part = construct_partition(masses, M, gamma)
        violations += part.min_mass < part.guarantee - 1e-12 or len(set(part.cells)) != M
        worst = max(worst, part.guarantee / part.min_mass)
    return SuiteReport(cases, violations, worst, gamma)


def multinomial_suite(M: int, n_max: int, qs: np.ndarray) -> SuiteReport:
    """Exhaustive multinomial max-PMF check for every ``n <= n_max`` and every row of ``qs``."""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if np.any(qs <= 0):
        raise PreconditionError("every q_m must be positive")
    violations, worst = 0, 0.0
    logq = np.log(qs).T
    for n in range(1, n_max + 1):
        comps = compositions(n, M)
        logpmf = (gammaln(n + 1) - gammaln(comps + 1).sum(axis=1))[:, None] + comps @ logq
        exact = np.exp(logpmf.max(axis=0))
        bound = multinomial_constant(M) / np.sqrt(float(n) ** (M - 1) * qs.prod(axis=1))
        violations += int((exact > bound).sum())
        worst = max(worst, float((exact / bound).max()))
    return SuiteReport(len(qs) * n_max, violations, worst)
