"""Data model: points, datasets, finite distributions, seeds and learners.

Feature and response spaces are finite and integer-indexed. A response index
``y`` is embedded in the reals as ``float(y)`` whenever predictions are
compared, so a learner trained on ``(x=1, y=5)`` can predict ``5.0``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, PreconditionError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """One step of the SplitMix64 finalizer, a counter-based 64-bit hash."""
    z = (state + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def splitmix64_array(state: np.ndarray) -> np.ndarray:
    """Vectorized :func:`splitmix64` on ``uint64`` arrays (arithmetic wraps)."""
    z = np.asarray(state, dtype=np.uint64) + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_bits(keys: np.ndarray, counter: int) -> np.ndarray:
    """``RandomSeed.derive(key, counter).bits`` for every key in ``keys``."""
    keys = np.asarray(keys, dtype=np.uint64)
    return splitmix64_array(keys * np.uint64(0xD1B54A32D192ED03) + np.uint64(counter))


def derive_range(key: int, start: int, stop: int) -> np.ndarray:
    """``RandomSeed.derive(key, t).bits`` for ``t`` in ``range(start, stop)``."""
    base = np.uint64((key * 0xD1B54A32D192ED03) & _MASK64)
    return splitmix64_array(base + np.arange(start, stop, dtype=np.uint64))


def seed_values(bits: np.ndarray) -> np.ndarray:
    return (np.asarray(bits, dtype=np.uint64) >> np.uint64(11)).astype(float) * 2.0 ** -53


# --------------------------------------------------------------------------
# Spaces, points and datasets


@dataclass(frozen=True)
class Space:
    x_size: int
    y_size: int

    def __post_init__(self):
        if self.x_size < 1 or self.y_size < 1:
            raise ConfigurationError(f"space sizes must be positive, got {self}")

    @property
    def n_atoms(self) -> int:
        return self.x_size * self.y_size

    def atom(self, x: int, y: int) -> int:
        return x * self.y_size + y

    def point(self, atom: int) -> "DataPoint":
        return DataPoint(*divmod(int(atom), self.y_size))


class DataPoint(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class Dataset:
    """Ordered sequence of points; ``same_multiset`` ignores the order."""

    points: tuple[DataPoint, ...] = ()

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[int]]) -> "Dataset":
        return cls(tuple(DataPoint(int(x), int(y)) for x, y in pairs))

    @classmethod
    def from_atoms(cls, atoms: Iterable[int], space: Space) -> "Dataset":
        ys = space.y_size
        return cls(tuple(DataPoint(*divmod(int(a), ys)) for a in atoms))

    def size(self) -> int:
        return len(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def drop_last(self) -> "Dataset":
        if not self.points:
            raise PreconditionError("cannot drop a point from an empty dataset")
        return Dataset(self.points[:-1])

    def without(self, i: int) -> "Dataset":
        return Dataset(self.points[:i] + self.points[i + 1:])

    def permuted(self, order: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.points[i] for i in order))

    def canonical(self) -> tuple[DataPoint, ...]:
        return tuple(sorted(self.points))

    def multiset(self) -> Counter:
        return Counter(self.points)

    def same_multiset(self, other: "Dataset") -> bool:
        return self.canonical() == other.canonical()

    def has_response(self, y: int) -> bool:
        return any(p.y == y for p in self.points)

    def has_feature(self, x: int) -> bool:
        return any(p.x == x for p in self.points)

    def features(self) -> tuple[int, ...]:
        return tuple(p.x for p in self.points)

    def to_list(self) -> list[list[int]]:
        return [[p.x, p.y] for p in self.points]


# --------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Probability table ``p(x, y)`` over a finite ``Space``."""

    space: Space
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.size != self.space.n_atoms:
            raise ConfigurationError(f"table has {p.size} entries, expected {self.space.n_atoms}")
        p = p.reshape(self.space.x_size, self.space.y_size)
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ConfigurationError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        flat = p.ravel()
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_support", np.flatnonzero(flat > 0))

    @classmethod
    def uniform(cls, space: Space) -> "FiniteDistribution":
        return cls(space, np.full((space.x_size, space.y_size), 1.0 / space.n_atoms))

    @classmethod
    def point_mass(cls, space: Space, x: int, y: int) -> "FiniteDistribution":
        p = np.zeros((space.x_size, space.y_size))
        p[x, y] = 1.0
        return cls(space, p)

    @property
    def atom_probs(self) -> np.ndarray:
        return self._flat

    @property
    def support(self) -> np.ndarray:
        """Atom indices with positive mass."""
        return self._support

    def marginal_x(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def marginal_y(self) -> np.ndarray:
        return self.probs.sum(axis=0)

    def max_point_mass(self) -> float:
        return float(self.probs.max())

    def sample_atoms(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.choice(self.space.n_atoms, size=shape, p=self._flat)

    def __eq__(self, other):
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.probs, other.probs)

    __hash__ = None


# --------------------------------------------------------------------------
# Seeds


@dataclass(frozen=True)
class RandomSeed:
    """A seed ``xi`` in [0, 1) backed by 64 random bits.

    ``value`` is the first draw of a counter-based stream keyed by ``bits``;
    ``stream()`` replays the same deterministic generator so a learner can
    take further draws that are tied to the single scalar seed.
    """

    bits: int

    @property
    def value(self) -> float:
        return (self.bits >> 11) * 2.0 ** -53

    @classmethod
    def from_value(cls, value: float) -> "RandomSeed":
        if not 0.0 <= value < 1.0:
            raise ConfigurationError(f"seed value must lie in [0, 1), got {value}")
        return cls(int(value * 2.0 ** 53) << 11)

    @classmethod
    def derive(cls, key: int, counter: int) -> "RandomSeed":
        return cls(splitmix64((key * 0xD1B54A32D192ED03 + counter) & _MASK64))

    def stream(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.bits))


# --------------------------------------------------------------------------
# Fitted models and learners

PROVENANCE = ("base", "adversarial-A1", "adversarial-wrapped")


@dataclass(frozen=True, eq=False)
class FittedModel:
    table: np.ndarray
    provenance: str = "base"

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.flags.writeable:
            t = t.copy()
            t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def __call__(self, x: int) -> float:
        return float(self.table[x])

    def __eq__(self, other):
        if not isinstance(other, FittedModel):
            return NotImplemented
        return np.array_equal(self.table, other.table)

    __hash__ = None


class Learner:
    """Symmetric, seed-randomized algorithm ``(dataset, seed) -> model``.

    Subclasses implement ``_table``, which receives the points in canonical
    (sorted) order; this makes every learner exactly permutation invariant.
    ``seed_partition`` lists half-open intervals of [0, 1) on which the fit
    does not depend on the seed, or ``None`` if no such finite partition is
    known.
    """

    name = "learner"
    deterministic = True
    symmetric = True

    def __init__(self, space: Space):
        self.space = space

    def fit(self, data: Dataset, seed: RandomSeed) -> FittedModel:
        return FittedModel(self._table(tuple(sorted(data.points)), seed))

    def _table(self, points: tuple[DataPoint, ...], seed: RandomSeed) -> np.ndarray:
        raise NotImplementedError

    def seed_partition(self) -> list[tuple[float, float]] | None:
        return [(0.0, 1.0)]

    def perturbations(self, train_atoms: np.ndarray, test_x: np.ndarray,
                      seed_bits: np.ndarray) -> np.ndarray:
        """Batch of ``|f_n(x) - f_{n-1}(x)|``; row ``t`` drops the last atom of ``train_atoms[t]``."""
        out = np.empty(len(train_atoms))
        rows = zip(np.asarray(train_atoms).tolist(), np.asarray(test_x).tolist(),
                   np.asarray(seed_bits, dtype=np.uint64).tolist())
        for t, (row, x, b) in enumerate(rows):
            data, seed = Dataset.from_atoms(row, self.space), RandomSeed(b)
            out[t] = abs(self.fit(data, seed).table[x] - self.fit(data.drop_last(), seed).table[x])
        return out

    def params(self) -> dict:
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class ConstantLearner(Learner):
    name = "constant"

    def __init__(self, space: Space, value: float = 0.0):
        super().__init__(space)
        self.value = float(value)

    def _table(self, points, seed):
        return np.full(self.space.x_size, self.value)

    def perturbations(self, train_atoms, test_x, seed_bits):
        return np.zeros(len(train_atoms))

    def params(self):
        return {"value": self.value}


class KNNRegressor(Learner):
    """k-nearest-neighbour mean on integer features (distance ``|x - x'|``).

    Ties are broken by the sort key ``(distance, x', y')``. An empty training
    set predicts 0; fewer than ``k`` points average everything available.
    """

    name = "knn"

    def __init__(self, space: Space, k: int = 1):
        super().__init__(space)
        if k < 1:
            raise ConfigurationError("k must be at least 1")
        self.k = int(k)

    def _table(self, points, seed):
        out = np.zeros(self.space.x_size)
        if not points:
            return out
        for x in range(self.space.x_size):
            nearest = sorted(points, key=lambda p: (abs(p.x - x), p.x, p.y))[: self.k]
            out[x] = sum(p.y for p in nearest) / len(nearest)
        return out

    def params(self):
        return {"k": self.k}


class RidgeRegressor(Learner):
    """Ridge regression on one-hot features via the normal equations."""

    name = "ridge"

    def __init__(self, space: Space, lam: float = 1.0):
        super().__init__(space)
        if lam <= 0:
            raise ConfigurationError("ridge penalty must be positive")
        self.lam = float(lam)

    def _table(self, points, seed):
        d = self.space.x_size
        gram = self.lam * np.eye(d)
        rhs = np.zeros(d)
        for p in points:
            gram[p.x, p.x] += 1.0
            rhs[p.x] += p.y
        return np.linalg.solve(gram, rhs)

    def params(self):
        return {"lam": self.lam}


class MeanLearner(Learner):
    name = "mean"

    def _table(self, points, seed):
        mean = sum(p.y for p in points) / len(points) if points else 0.0
        return np.full(self.space.x_size, mean)


class SizeLearner(Learner):
    """Predicts the training-set size everywhere (maximally unstable)."""

    name = "size"

    def _table(self, points, seed):
        return np.full(self.space.x_size, float(len(points)))

    def perturbations(self, train_atoms, test_x, seed_bits):
        return np.ones(len(train_atoms))


class SeedThresholdLearner(Learner):
    """Predicts ``|D|`` when ``xi < rho0`` and 0 otherwise.

    Its perturbation is 1 exactly when ``xi < rho0``, so the instability
    probability equals ``rho0`` for every ``epsilon < 1`` and every
    distribution.
    """

    name = "seed-threshold"
    deterministic = False

    def __init__(self, space: Space, rho0: float = 0.3):
        super().__init__(space)
        if not 0.0 <= rho0 <= 1.0:
            raise ConfigurationError("rho0 must lie in [0, 1]")
        self.rho0 = float(rho0)

    def _table(self, points, seed):
        level = float(len(points)) if seed.value < self.rho0 else 0.0
        return np.full(self.space.x_size, level)

    def perturbations(self, train_atoms, test_x, seed_bits):
        return (seed_values(seed_bits) < self.rho0).astype(float)

    def seed_partition(self):
        cuts = sorted({0.0, self.rho0, 1.0})
        return [(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]

    def params(self):
        return {"rho0": self.rho0}


LEARNERS = {
    cls.name: cls
    for cls in (ConstantLearner, KNNRegressor, RidgeRegressor, MeanLearner, SizeLearner,
                SeedThresholdLearner)
}


def make_learner(name: str, space: Space, **params) -> Learner:
    try:
        cls = LEARNERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown learner {name!r}; known: {sorted(LEARNERS)}") from None
    try:
        return cls(space, **params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for learner {name!r}: {exc}") from None


def builtin_learner_zoo(space: Space, k: int = 1, lam: float = 1.0, rho0: float = 0.3) -> list[Learner]:
    return [
        ConstantLearner(space),
        KNNRegressor(space, k=k),
        RidgeRegressor(space, lam=lam),
        MeanLearner(space),
        SizeLearner(space),
        SeedThresholdLearner(space, rho0=rho0),
    ]


# --------------------------------------------------------------------------
# Operations


def sample_dataset(dist: FiniteDistribution, n: int, seed: RandomSeed | np.random.Generator) -> Dataset:
    """Draw ``n`` i.i.d. points from ``dist``, reproducibly from ``seed``."""
    if n < 0:
        raise PreconditionError("n must be nonnegative")
    rng = seed.stream() if isinstance(seed, RandomSeed) else seed
    if n == 0:
        return Dataset()
    return Dataset.from_atoms(dist.sample_atoms(rng, n), dist.space)


def fit(learner: Learner, data: Dataset, seed: RandomSeed) -> FittedModel:
    return learner.fit(data, seed)


# --------------------------------------------------------------------------
# JSON configuration


@dataclass
class ProblemConfig:
    """Distribution, learner and any extra keys from a JSON document."""

    dist: FiniteDistribution
    learner: Learner
    extra: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def parse_problem(doc: dict) -> ProblemConfig:
    try:
        space_doc = doc["space"]
        space = Space(int(space_doc["x_size"]), int(space_doc["y_size"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"missing or invalid 'space': {exc}") from None
    probs = doc.get("probs")
    if probs is None:
        dist = FiniteDistribution.uniform(space)
    else:
        arr = np.asarray(probs, dtype=float)
        if arr.size != space.n_atoms:
            raise ConfigurationError(
                f"'probs' has {arr.size} entries, expected {space.n_atoms}")
        dist = FiniteDistribution(space, arr)
    learner_doc = doc.get("learner", {"name": "constant"})
    if "name" not in learner_doc:
        raise ConfigurationError("learner spec needs a 'name'")
    learner = make_learner(learner_doc["name"], space, **learner_doc.get("params", {}))
    extra = {k: v for k, v in doc.items() if k not in ("space", "probs", "learner")}
    return ProblemConfig(dist, learner, extra, doc)


def load_problem(path: str | Path) -> ProblemConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_problem(doc)
