import numpy as np
import pytest

from stabtest.core import (
    ConstantLearner, Dataset, FiniteDistribution, KNNRegressor, Learner, MeanLearner, RandomSeed,
    SeedThresholdLearner, SizeLearner, Space, builtin_learner_zoo,
)
from stabtest.errors import EnumerationCapError, PreconditionError
from stabtest.stability import (
    estimate_delta_star_exact, estimate_delta_star_mc, perturbation, seed_conditional_instability,
    seed_conditional_instability_mc,
)


def test_perturbation_constant_and_size(space22):
    data = Dataset.from_pairs([(0, 1)] * 5)
    assert perturbation(ConstantLearner(space22), data, 0, RandomSeed(3)) == 0.0
    assert perturbation(SizeLearner(space22), data, 1, RandomSeed(3)) == 1.0


def test_perturbation_one_nn_hand_trace():
    sp = Space(2, 10)
    d = Dataset.from_pairs([(0, 1), (1, 9)])
    assert perturbation(KNNRegressor(sp, 1), d, 1, RandomSeed(0)) == 8.0


def test_perturbation_needs_points(space22):
    with pytest.raises(PreconditionError):
        perturbation(MeanLearner(space22), Dataset(), 0, RandomSeed(0))


def test_mc_constant_and_size(uniform22, space22):
    assert estimate_delta_star_mc(ConstantLearner(space22), uniform22, 3, 0.5, 500, 1).point_estimate == 0
    assert estimate_delta_star_mc(SizeLearner(space22), uniform22, 3, 0.5, 500, 1).point_estimate == 1


def test_mc_seed_threshold(uniform22, space22):
    est = estimate_delta_star_mc(SeedThresholdLearner(space22, 0.3), uniform22, 2, 0.5, 10 ** 5, 17)
    assert abs(est.point_estimate - 0.3) <= 3 * est.std_error
    assert est.method == "monte-carlo"


def test_mc_rejects_zero_trials(uniform22, space22):
    with pytest.raises(PreconditionError):
        estimate_delta_star_mc(MeanLearner(space22), uniform22, 3, 0.5, 0, 1)


def test_mc_does_not_depend_on_workers(uniform22, space22):
    learner = KNNRegressor(space22, 1)
    a = estimate_delta_star_mc(learner, uniform22, 3, 0.5, 5000, 4, workers=1)
    b = estimate_delta_star_mc(learner, uniform22, 3, 0.5, 5000, 4, workers=2)
    assert a == b


def test_exact_constant_size_threshold(uniform22, space22):
    assert estimate_delta_star_exact(ConstantLearner(space22), uniform22, 3, 0.0).point_estimate == 0
    assert estimate_delta_star_exact(SizeLearner(space22), uniform22, 3, 0.5).point_estimate == 1
    est = estimate_delta_star_exact(SeedThresholdLearner(space22, 0.3), uniform22, 3, 0.5)
    assert est.point_estimate == pytest.approx(0.3, abs=1e-15)
    assert est.std_error == 0 and est.method == "exact"


def test_exact_one_nn_value(uniform22, space22):
    # by hand: unstable iff the dropped point is the lone nearest neighbour with a differing response
    est = estimate_delta_star_exact(KNNRegressor(space22, 1), uniform22, 3, 0.5)
    assert est.point_estimate == pytest.approx(0.15625, abs=1e-15)


def test_exact_cap(space22):
    dist = FiniteDistribution.uniform(Space(10, 10))
    with pytest.raises(EnumerationCapError):
        estimate_delta_star_exact(MeanLearner(dist.space), dist, 4, 0.5)


def test_ties_at_epsilon_count_as_stable(uniform22, space22):
    assert estimate_delta_star_exact(SizeLearner(space22), uniform22, 3, 1.0).point_estimate == 0.0
    assert estimate_delta_star_exact(SizeLearner(space22), uniform22, 3, 0.999).point_estimate == 1.0


@pytest.mark.parametrize("learner_index", range(6))
def test_monotone_in_epsilon(learner_index):
    sp = Space(3, 3)
    dist = FiniteDistribution(sp, np.arange(1, 10) / 45)
    learner = builtin_learner_zoo(sp, k=2)[learner_index]
    vals = [estimate_delta_star_exact(learner, dist, 2, e).point_estimate
            for e in [0.0, 0.1, 0.25, 0.5, 1.0, 2.0]]
    assert all(0 <= v <= 1 for v in vals)
    assert all(a >= b for a, b in zip(vals, vals[1:]))


class NoisyLearner(Learner):
    """Mean plus a seed-driven jitter; has no finite seed partition."""

    name = "noisy"

    def _table(self, points, seed):
        base = np.mean([p.y for p in points]) if points else 0.0
        return np.full(self.space.x_size, base + seed.stream().normal() * 0.3 * len(points))

    def seed_partition(self):
        return None


def test_hybrid_for_learner_without_seed_partition(uniform22, space22):
    learner = NoisyLearner(space22)
    hyb = estimate_delta_star_exact(learner, uniform22, 2, 0.5, seed_draws=64, seed=1)
    assert hyb.method == "hybrid" and 0 < hyb.point_estimate < 1
    mc = estimate_delta_star_mc(learner, uniform22, 2, 0.5, 20000, 5)
    assert abs(hyb.point_estimate - mc.point_estimate) <= 3 * (hyb.std_error + mc.std_error) + 1e-9


def test_seed_conditional_instability(uniform22, space22):
    learner = SeedThresholdLearner(space22, 0.3)
    assert seed_conditional_instability(learner, uniform22, 3, 0.5) == [(0.0, 0.3, 1.0), (0.3, 1.0, 0.0)]
    assert seed_conditional_instability_mc(learner, uniform22, 3, 0.5, 0.0, 0.3, 200, 1) == 1.0
    assert seed_conditional_instability_mc(learner, uniform22, 3, 0.5, 0.3, 1.0, 200, 1) == 0.0
