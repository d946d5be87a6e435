"""Budgeted black-box test executor.

A strategy sees the input data and the history of earlier rounds and either
asks for another fit ``(training set, seed[, evaluation points])`` or stops.
The harness refuses any round whose cost would overflow the budget, without
calling the learner, and then exits the loop. In ``"black-box"`` mode the
strategy can read a fitted model only through the evaluations it requested.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import Dataset, DataPoint, FittedModel, Learner, RandomSeed
from .errors import ConfigurationError, InterfaceViolation, PreconditionError

MODES = ("transparent", "black-box")


@dataclass
class BudgetLedger:
    b_train: float
    b_eval: float = math.inf
    used_train: int = 0
    used_eval: int = 0

    def __post_init__(self):
        if not self.b_train > 0 or not self.b_eval >= 0:
            raise PreconditionError("training budget must be positive, evaluation budget nonnegative")

    def fresh(self) -> "BudgetLedger":
        return BudgetLedger(self.b_train, self.b_eval)

    def admits(self, n_train: int, n_eval: int, black_box: bool) -> bool:
        if self.used_train + n_train > self.b_train:
            return False
        return not (black_box and self.used_eval + n_eval > self.b_eval)

    def charge(self, n_train: int, n_eval: int, black_box: bool) -> None:
        self.used_train += n_train
        if black_box:
            self.used_eval += n_eval

    def within_budget(self) -> bool:
        return self.used_train <= self.b_train and self.used_eval <= self.b_eval

    def snapshot(self) -> dict:
        def num(v):
            return None if math.isinf(v) else v
        return {"b_train": num(self.b_train), "b_eval": num(self.b_eval),
                "used_train": self.used_train, "used_eval": self.used_eval}


@dataclass(frozen=True)
class RoundRequest:
    train: Dataset
    seed: RandomSeed
    eval_x: tuple[int, ...] | None = None


class RoundRecord:
    """One executed round. ``model`` is hidden in black-box mode."""

    __slots__ = ("index", "train", "seed", "zeta", "eval_x", "evaluations", "_model", "_black_box")

    def __init__(self, index, train, seed, zeta, eval_x, evaluations, model, black_box):
        self.index = index
        self.train = train
        self.seed = seed
        self.zeta = zeta
        self.eval_x = eval_x
        self.evaluations = evaluations
        self._model = model
        self._black_box = black_box

    @property
    def model(self) -> FittedModel:
        if self._black_box:
            raise InterfaceViolation("fitted models are not observable in black-box mode")
        if self._model is None:
            raise InterfaceViolation("model not retained in this trace")
        return self._model

    def same_as(self, other: "RoundRecord") -> bool:
        if (self.train != other.train or self.seed != other.seed or self.zeta != other.zeta
                or self.eval_x != other.eval_x or self.evaluations != other.evaluations):
            return False
        if self._black_box or other._black_box:
            return self._black_box == other._black_box  # models are not observable
        if self._model is None or other._model is None:
            return self._model is other._model
        return self._model == other._model

    def to_json(self) -> dict:
        return {"round": self.index, "train": self.train.to_list(), "seed_bits": self.seed.bits,
                "xi": self.seed.value, "zeta_bits": self.zeta.bits,
                "eval_x": list(self.eval_x) if self.eval_x is not None else None,
                "evaluations": list(self.evaluations) if self.evaluations is not None else None,
                "predictions": (self._model.table.tolist()
                                if self._model is not None and not self._black_box else None)}


@dataclass
class History:
    labeled: Dataset
    unlabeled: tuple[int, ...]
    black_box: bool
    b_train: float
    b_eval: float
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def n_labeled(self) -> int:
        return len(self.labeled)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled)


class TestStrategy(Protocol):
    def next_round(self, history: History, zeta: RandomSeed) -> RoundRequest | None: ...

    def finalize(self, history: History, zeta: RandomSeed) -> int: ...


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj).encode()).hexdigest()[:16]


@dataclass
class TestTrace:
    rounds: list[RoundRecord]
    verdict: int
    ledger: dict
    labeled_id: str
    unlabeled_id: str
    mode: str
    seed: int
    refused: dict | None = None
    statistic: float | None = None

    def same_as(self, other: "TestTrace") -> bool:
        return (self.verdict == other.verdict and self.ledger == other.ledger
                and self.labeled_id == other.labeled_id and self.refused == other.refused
                and len(self.rounds) == len(other.rounds)
                and all(a.same_as(b) for a, b in zip(self.rounds, other.rounds)))


def run_test(strategy: TestStrategy, learner: Learner, labeled: Dataset,
             unlabeled: Sequence[int], ledger: BudgetLedger, seed: int,
             mode: str = "transparent", max_rounds: int = 10 ** 6) -> TestTrace:
    """Execute ``strategy`` against ``learner`` under the budgets in ``ledger``.

    Round ``r`` gets the seed ``zeta_r = derive(seed, r)``; the final decision
    gets ``zeta = derive(seed, 0)``, so a run is replayable from ``seed``.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    black_box = mode == "black-box"
    run = ledger.fresh()
    history = History(labeled, tuple(unlabeled), black_box, run.b_train, run.b_eval)
    refused = None
    for r in range(1, max_rounds + 1):
        zeta = RandomSeed.derive(seed, r)
        req = strategy.next_round(history, zeta)
        if req is None:
            break
        eval_x = tuple(req.eval_x) if req.eval_x is not None else None
        n_eval = len(eval_x) if eval_x is not None else 0
        if not run.admits(len(req.train), n_eval, black_box):
            refused = {"round": r, "train_size": len(req.train), "eval_size": n_eval}
            break
        model = learner.fit(req.train, req.seed)
        evaluations = tuple(float(model.table[x]) for x in eval_x) if eval_x is not None else None
        run.charge(len(req.train), n_eval, black_box)
        history.rounds.append(RoundRecord(r, req.train, req.seed, zeta, eval_x, evaluations,
                                          model, black_box))
    verdict = strategy.finalize(history, RandomSeed.derive(seed, 0))
    if verdict not in (0, 1):
        raise ConfigurationError(f"strategy returned verdict {verdict!r}, expected 0 or 1")
    stat = getattr(strategy, "statistic", None)
    return TestTrace(
        rounds=history.rounds, verdict=int(verdict), ledger=run.snapshot(),
        labeled_id=_digest(labeled.to_list()), unlabeled_id=_digest(list(map(int, unlabeled))),
        mode=mode, seed=seed, refused=refused,
        statistic=stat(history) if callable(stat) else None)


def coupled_run(strategy: TestStrategy, learner_a: Learner, learner_b: Learner, labeled: Dataset,
                unlabeled: Sequence[int], ledger: BudgetLedger, seed: int,
                mode: str = "transparent") -> tuple[TestTrace, TestTrace]:
    """Run the same strategy on identical data and seed streams with two learners."""
    if learner_a.space != learner_b.space:
        raise ConfigurationError("coupled learners must share their spaces")
    ta = run_test(copy.deepcopy(strategy), learner_a, labeled, unlabeled, ledger, seed, mode)
    tb = run_test(copy.deepcopy(strategy), learner_b, labeled, unlabeled, ledger, seed, mode)
    return ta, tb


# --------------------------------------------------------------------------
# Events


@dataclass(frozen=True)
class EventFlags:
    E_y: bool | None = None
    E_x: bool | None = None
    E_x_tilde: bool | None = None
    E_R: bool | None = None
    E_q: bool | None = None


def detect_events(trace: TestTrace, y: int | None = None, x: int | None = None,
                  region=None, n: int | None = None, mask=None) -> EventFlags:
    """Flags for the trigger-avoidance events of a completed trace.

    ``E_y``: ``y`` is absent from every training set. ``E_x``: ``x`` is absent
    from every training set; ``E_x_tilde`` also requires ``x`` absent from
    every evaluation set. ``E_R``: no size-``n`` round used a seed in
    ``region``. ``E_q``: no size-``n`` round had a count vector flagged by
    ``mask`` (an ``adversarial.CountMask``).
    """
    rounds = trace.rounds
    ey = ex = ext = er = eq = None
    if y is not None:
        ey = not any(r.train.has_response(y) for r in rounds)
    if x is not None:
        ex = not any(r.train.has_feature(x) for r in rounds)
        ext = ex and not any(r.eval_x is not None and x in r.eval_x for r in rounds)
    sized = [r for r in rounds if n is None or len(r.train) == n]
    if region is not None:
        if n is None:
            raise PreconditionError("E_R needs the target size n")
        er = not any(region.contains(r.seed.value) for r in sized)
    if mask is not None:
        eq = not any(mask.flags(r.train) for r in rounds if len(r.train) == mask.n)
    return EventFlags(ey, ex, ext, er, eq)


# --------------------------------------------------------------------------
# JSON-lines traces


def write_trace_jsonl(trace: TestTrace, path: str | Path) -> None:
    with open(path, "w") as fh:
        header = {"type": "header", "mode": trace.mode, "seed": trace.seed,
                  "labeled_id": trace.labeled_id, "unlabeled_id": trace.unlabeled_id}
        fh.write(json.dumps(header) + "\n")
        for r in trace.rounds:
            fh.write(json.dumps({"type": "round", **r.to_json()}) + "\n")
        footer = {"type": "verdict", "verdict": trace.verdict, "ledger": trace.ledger,
                  "refused": trace.refused, "statistic": trace.statistic}
        fh.write(json.dumps(footer) + "\n")


def read_trace_jsonl(path: str | Path) -> TestTrace:
    header, footer, rounds = None, None, []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "header":
                header = rec
            elif kind == "verdict":
                footer = rec
            else:
                black_box = header["mode"] == "black-box"
                preds = rec["predictions"]
                model = FittedModel(np.array(preds)) if preds is not None and not black_box else None
                rounds.append(RoundRecord(
                    rec["round"], Dataset(tuple(DataPoint(*p) for p in rec["train"])),
                    RandomSeed(rec["seed_bits"]), RandomSeed(rec["zeta_bits"]),
                    tuple(rec["eval_x"]) if rec["eval_x"] is not None else None,
                    tuple(rec["evaluations"]) if rec["evaluations"] is not None else None,
                    model, black_box))
    if header is None or footer is None:
        raise ConfigurationError(f"incomplete trace file {path}")
    ledger = {k: v for k, v in footer["ledger"].items()}
    return TestTrace(rounds, footer["verdict"], ledger, header["labeled_id"],
                     header["unlabeled_id"], header["mode"], header["seed"], footer["refused"],
                     footer["statistic"])
