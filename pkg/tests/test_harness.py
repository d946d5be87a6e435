from dataclasses import dataclass

import numpy as np
import pytest

from stabtest.adversarial import SeedRegion, SeedTrigger, ResponseTrigger, wrap
from stabtest.binom_test import BinomialStrategy, draw_inputs
from stabtest.core import (
    Dataset, FiniteDistribution, FittedModel, KNNRegressor, Learner, MeanLearner, RandomSeed,
    SeedThresholdLearner, Space,
)
from stabtest.errors import ConfigurationError, InterfaceViolation, PreconditionError
from stabtest.harness import (
    BudgetLedger, RoundRequest, coupled_run, detect_events, read_trace_jsonl, run_test,
    write_trace_jsonl,
)


class CountingLearner(Learner):
    name = "counting"

    def __init__(self, base):
        super().__init__(base.space)
        self.base, self.calls = base, 0

    def fit(self, data, seed):
        self.calls += 1
        return self.base.fit(data, seed)


@dataclass
class StopNow:
    def next_round(self, history, zeta):
        return None

    def finalize(self, history, zeta):
        return 0


@dataclass
class Scripted:
    """Issues the given requests in order, then stops; verdict 1 if any round ran."""

    requests: list

    def next_round(self, history, zeta):
        r = len(history.rounds)
        return self.requests[r] if r < len(self.requests) else None

    def finalize(self, history, zeta):
        return int(bool(history.rounds))


def _data(pairs):
    return Dataset.from_pairs(pairs)


def test_immediate_stop(space22):
    t = run_test(StopNow(), MeanLearner(space22), _data([(0, 0)]), (), BudgetLedger(10), 1)
    assert t.verdict == 0 and t.ledger["used_train"] == 0 and t.rounds == []


def test_oversized_request_refused_without_fit(space22):
    learner = CountingLearner(MeanLearner(space22))
    big = _data([(0, 1)] * 11)
    t = run_test(Scripted([RoundRequest(big, RandomSeed(1))]), learner, big, (), BudgetLedger(10), 1)
    assert learner.calls == 0 and t.ledger["used_train"] == 0
    assert t.refused == {"round": 1, "train_size": 11, "eval_size": 0}


def test_binomial_strategy_fit_count(space22):
    dist = FiniteDistribution.uniform(Space(3, 2))
    labeled, unlabeled = draw_inputs(dist, 50, 100, np.random.default_rng(0))
    learner = CountingLearner(KNNRegressor(dist.space, 1))
    t = run_test(BinomialStrategy(10, 0.5, 0.1, 0.05), learner, labeled, unlabeled, BudgetLedger(100), 3)
    assert len(t.rounds) == 10 == learner.calls
    assert t.ledger["used_train"] == 5 * 19
    assert [len(r.train) for r in t.rounds] == [10, 9] * 5


def test_budget_caps_block_count_when_it_binds(space22):
    # kappa = min(100/10, 1000/10, ...) = 10 blocks would need 190 points; the budget pays for 5
    dist = FiniteDistribution.uniform(Space(3, 2))
    labeled, unlabeled = draw_inputs(dist, 1000, 0, np.random.default_rng(1))
    t = run_test(BinomialStrategy(10, 0.5, 0.1, 0.05), MeanLearner(dist.space), labeled, unlabeled,
                 BudgetLedger(100), 3)
    assert len(t.rounds) == 10 and t.ledger["used_train"] == 95 and t.refused is None


def test_events_on_empty_trace(space22):
    t = run_test(StopNow(), MeanLearner(space22), _data([(0, 0)]), (), BudgetLedger(10), 1)
    f = detect_events(t, y=1, x=0, region=SeedRegion(((0.0, 0.5),)), n=3)
    assert f.E_y and f.E_x and f.E_x_tilde and f.E_R


def test_events_detect_response_and_seed_region(space22):
    req = RoundRequest(_data([(0, 1), (1, 0), (0, 0)]), RandomSeed.from_value(0.7))
    t = run_test(Scripted([req]), MeanLearner(space22), req.train, (), BudgetLedger(10), 1)
    f = detect_events(t, y=1, region=SeedRegion(((0.0, 0.5),)), n=3)
    assert f.E_y is False and f.E_R is True
    f = detect_events(t, region=SeedRegion(((0.6, 0.8),)), n=3)
    assert f.E_R is False


def test_eval_sets_break_tilde_event(space22):
    req = RoundRequest(_data([(0, 1)]), RandomSeed(5), eval_x=(1,))
    t = run_test(Scripted([req]), MeanLearner(space22), req.train, (), BudgetLedger(10), 1, "black-box")
    f = detect_events(t, x=1)
    assert f.E_x and not f.E_x_tilde


def test_black_box_hides_models(space22):
    req = RoundRequest(_data([(0, 1)]), RandomSeed(5), eval_x=(0,))
    t = run_test(Scripted([req]), MeanLearner(space22), req.train, (), BudgetLedger(10), 1, "black-box")
    assert t.rounds[0].evaluations == (1.0,)
    with pytest.raises(InterfaceViolation):
        t.rounds[0].model


def test_eval_budget_enforced_in_black_box_only(space22):
    reqs = [RoundRequest(_data([(0, 1)]), RandomSeed(5), eval_x=(0, 1))] * 3
    bb = run_test(Scripted(reqs), MeanLearner(space22), reqs[0].train, (), BudgetLedger(10, 4), 1, "black-box")
    assert len(bb.rounds) == 2 and bb.ledger["used_eval"] == 4 and bb.refused["round"] == 3
    tr = run_test(Scripted(reqs), MeanLearner(space22), reqs[0].train, (), BudgetLedger(10, 4), 1)
    assert len(tr.rounds) == 3 and tr.ledger["used_eval"] == 0


def test_invalid_mode_and_budget(space22):
    with pytest.raises(ConfigurationError):
        run_test(StopNow(), MeanLearner(space22), Dataset(), (), BudgetLedger(1), 0, "grey-box")
    with pytest.raises(PreconditionError):
        BudgetLedger(0)


class RandomStrategy:
    """Random request sizes, seeds and evaluation sets; stops at random."""

    def __init__(self, rng, n_max, x_size):
        self.rng, self.n_max, self.x_size = rng, n_max, x_size

    def next_round(self, history, zeta):
        if self.rng.random() < 0.1:
            return None
        size = int(self.rng.integers(0, self.n_max + 1))
        idx = self.rng.integers(0, len(history.labeled), size)
        train = Dataset(tuple(history.labeled[i] for i in idx))
        ev = tuple(self.rng.integers(0, self.x_size, int(self.rng.integers(0, 4))).tolist())
        return RoundRequest(train, RandomSeed(int(self.rng.integers(0, 2 ** 63))), ev)

    def finalize(self, history, zeta):
        return int(self.rng.integers(0, 2))


def test_budget_fuzz(uniform22, space22):
    rng = np.random.default_rng(2024)
    for i in range(500):
        b_train = int(rng.integers(1, 40))
        b_eval = int(rng.integers(0, 10))
        mode = "black-box" if i % 2 else "transparent"
        labeled, _ = draw_inputs(uniform22, 20, 0, rng)
        learner = CountingLearner(MeanLearner(space22))
        t = run_test(RandomStrategy(rng, 15, 2), learner, labeled, (), BudgetLedger(b_train, b_eval), i, mode)
        assert t.ledger["used_train"] == sum(len(r.train) for r in t.rounds) <= b_train
        if mode == "black-box":
            assert t.ledger["used_eval"] == sum(len(r.eval_x) for r in t.rounds) <= b_eval
        assert learner.calls == len(t.rounds)
        assert t.verdict in (0, 1)


def test_replay_is_bit_identical(uniform22, space22):
    labeled, unlabeled = draw_inputs(uniform22, 30, 10, np.random.default_rng(3))
    strat = BinomialStrategy(3, 0.5, 0.1, 0.05)
    learner = SeedThresholdLearner(space22, 0.3)
    a = run_test(strat, learner, labeled, unlabeled, BudgetLedger(50), 77)
    b = run_test(strat, learner, labeled, unlabeled, BudgetLedger(50), 77)
    assert a.same_as(b)
    c = run_test(strat, learner, labeled, unlabeled, BudgetLedger(50), 78)
    assert not a.same_as(c)


def test_trace_jsonl_roundtrip(tmp_path, uniform22, space22):
    labeled, unlabeled = draw_inputs(uniform22, 30, 10, np.random.default_rng(3))
    for mode in ("transparent", "black-box"):
        t = run_test(BinomialStrategy(3, 0.5, 0.1, 0.05), KNNRegressor(space22, 1), labeled, unlabeled,
                     BudgetLedger(50), 5, mode)
        path = tmp_path / f"{mode}.jsonl"
        write_trace_jsonl(t, path)
        back = read_trace_jsonl(path)
        assert back.same_as(t) and back.statistic == t.statistic and back.mode == mode


def test_coupled_identical_learners(uniform22, space22):
    labeled, unlabeled = draw_inputs(uniform22, 30, 10, np.random.default_rng(4))
    learner = KNNRegressor(space22, 1)
    a, b = coupled_run(BinomialStrategy(3, 0.5, 0.1, 0.05), learner, learner, labeled, unlabeled,
                       BudgetLedger(50), 9)
    assert a.same_as(b)


def test_coupled_requires_shared_space(space22):
    with pytest.raises(ConfigurationError):
        coupled_run(StopNow(), MeanLearner(space22), MeanLearner(Space(3, 2)), Dataset(), (),
                    BudgetLedger(1), 0)


def test_response_wrap_coupling():
    sp = Space(2, 3)
    dist = FiniteDistribution(sp, [[0.25, 0.25, 0.0], [0.25, 0.25, 0.0]])
    base = MeanLearner(sp)
    wrapped = wrap(base, ResponseTrigger(2), 3, 0.5)
    from stabtest.adversarial import corrupt
    mixed = corrupt(dist, "response", 2, 0.05)
    rng = np.random.default_rng(8)
    held = 0
    for t in range(300):
        labeled, unlabeled = draw_inputs(mixed, 6, 2, rng)
        a, b = coupled_run(BinomialStrategy(3, 0.5, 0.1, 0.05), base, wrapped, labeled, unlabeled,
                           BudgetLedger(10), t)
        if detect_events(a, y=2).E_y:
            held += 1
            assert a.verdict == b.verdict and a.same_as(b)
    assert held > 50


def test_seed_region_wrap_coupling(uniform22, space22):
    base = KNNRegressor(space22, 1)
    region = SeedRegion(((0.0, 0.2), (0.5, 0.6)))
    wrapped = wrap(base, SeedTrigger(region), 3, 0.5)
    rng = np.random.default_rng(9)
    held = 0
    for t in range(300):
        labeled, unlabeled = draw_inputs(uniform22, 6, 2, rng)
        a, b = coupled_run(BinomialStrategy(3, 0.5, 0.1, 0.05), base, wrapped, labeled, unlabeled,
                           BudgetLedger(10), t)
        if detect_events(a, region=region, n=3).E_R:
            held += 1
            assert a.verdict == b.verdict
    assert held > 50


class Tampered(Learner):
    """``base`` with predictions at ``hidden`` features replaced."""

    name = "tampered"

    def __init__(self, base, hidden, value):
        super().__init__(base.space)
        self.base, self.hidden, self.value = base, hidden, value

    def fit(self, data, seed):
        t = self.base.fit(data, seed).table.copy()
        t[list(self.hidden)] = self.value
        return FittedModel(t)


class FixedEvalStrategy:
    """Random fits, evaluations only on ``allowed`` features; verdict from evaluations."""

    def __init__(self, allowed, rounds, rng_seed):
        self.allowed, self.rounds, self.rng_seed = allowed, rounds, rng_seed

    def next_round(self, history, zeta):
        r = len(history.rounds)
        if r == self.rounds:
            return None
        rng = np.random.default_rng([self.rng_seed, r])
        idx = rng.integers(0, len(history.labeled), 3)
        return RoundRequest(Dataset(tuple(history.labeled[i] for i in idx)), zeta,
                            tuple(rng.choice(self.allowed, 2).tolist()))

    def finalize(self, history, zeta):
        return int(sum(sum(r.evaluations) for r in history.rounds) > zeta.value * 10)


def test_information_barrier():
    sp = Space(5, 3)
    dist = FiniteDistribution.uniform(sp)
    base = KNNRegressor(sp, 2)
    rng = np.random.default_rng(10)
    for t in range(100):
        allowed = [0, 1, 2]
        tampered = Tampered(base, hidden=(3, 4), value=float(rng.normal() * 100))
        labeled, _ = draw_inputs(dist, 12, 0, rng)
        strat = FixedEvalStrategy(allowed, 4, t)
        a = run_test(strat, base, labeled, (), BudgetLedger(100, 100), t, "black-box")
        b = run_test(strat, tampered, labeled, (), BudgetLedger(100, 100), t, "black-box")
        assert a.verdict == b.verdict and a.same_as(b)
