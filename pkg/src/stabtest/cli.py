"""Command-line experiment runner.

Every subcommand reads an optional JSON config, applies the ``--seed`` and
``--trials`` overrides, and writes a table whose leading ``#`` lines record
the kind, master seed and a hash of the resolved config. Identical
``(config, seed)`` pairs give byte-identical output for any ``--workers``.

Example::

    stabtest power-experiment --config power.json --seed 7 --out power.csv --figure power.png
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import adversarial as adv
from .binom_test import (
    BinomialStrategy, binomial_thresholds, draw_inputs, effective_blocks, mc_power,
    power_closed_form, run_test,
)
from .bounds import (
    PowerBoundInputs, data_counts_bound_check, multinomial_suite, partition_suite, theorem1_bound,
    theorem2_bound, theorem3_bound,
)
from .core import FiniteDistribution, RandomSeed, SeedThresholdLearner, Space, parse_problem
from .errors import StabTestError
from .harness import BudgetLedger, write_trace_jsonl
from .stability import estimate_delta_star_exact, estimate_delta_star_mc

KINDS = ("estimate-stability", "run-binom-test", "power-experiment", "adversarial-demo",
         "bounds", "lemma-check")

DEFAULTS = {
    "estimate-stability": {
        "space": {"x_size": 2, "y_size": 2}, "learner": {"name": "knn", "params": {"k": 1}},
        "n": 3, "epsilon": [0.25, 0.5, 1.0], "method": "both", "trials": 10000,
    },
    "run-binom-test": {
        "space": {"x_size": 2, "y_size": 2}, "learner": {"name": "mean"},
        "n": 3, "epsilon": 0.5, "delta": 0.1, "alpha": 0.05, "n_labeled": 30, "n_unlabeled": 10,
        "b_train": 50, "b_eval": None, "mode": "transparent", "trials": 1,
    },
    "power-experiment": {
        "space": {"x_size": 2, "y_size": 2}, "learner": {"name": "seed-threshold"},
        "n": 3, "epsilon": 0.5, "alpha": 0.05, "delta": [0.1, 0.2], "delta_star": [0.0, 0.05, "delta"],
        "kappa_floor": [2, 5, 10], "engine": "vectorized", "trials": 10000,
    },
    "adversarial-demo": {
        "space": {"x_size": 3, "y_size": 3},
        "probs": [[0.25, 0.25, 0.0], [0.25, 0.25, 0.0], [0.0, 0.0, 0.0]],
        "learner": {"name": "mean"}, "target": 2,
        "kinds": ["response", "feature-train", "feature-eval"], "c_offsets": [0.01, 0.05, 0.1],
        "n": 3, "epsilon": 0.5, "delta": 0.1, "alpha": 0.05,
        "n_labeled": 6, "n_unlabeled": 2, "trials": 1000,
    },
    "bounds": {
        "alpha": 0.05, "delta": 0.1, "delta_star": 0.0, "n": 10, "n_labeled": 1000,
        "n_unlabeled": 1000, "b_train": [20, 50, 100, 200, 500], "b_eval": 0,
        "x_size": "inf", "y_size": "inf", "C": 1.0, "trials": 1,
    },
    "lemma-check": {
        "M": [2, 3, 4, 5, 6], "gamma_fractions": [0.1, 0.3, 0.6, 0.9], "multinomial_M": [2, 3, 4],
        "n_max": 20, "data_counts_spaces": [[2, 3], [3, 3], [2, 4]], "data_counts_n": [1, 4, 8],
        "trials": 1000,
    },
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# Config handling


def _num(v):
    """JSON value to float; ``"inf"`` and ``None`` mean unbounded."""
    if v is None:
        return math.inf
    return float(v)


def _listify(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def resolve_config(kind: str, doc: dict | None, seed: int | None, trials: int | None) -> dict:
    if kind not in KINDS:
        raise UsageError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    cfg = json.loads(json.dumps(DEFAULTS[kind]))
    if doc:
        doc_kind = doc.get("kind")
        if doc_kind is not None and doc_kind != kind:
            raise UsageError(f"config is for {doc_kind!r}, not {kind!r}")
        cfg.update({k: v for k, v in doc.items() if k != "kind"})
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    if trials is not None:
        cfg["trials"] = trials
    if not isinstance(cfg["trials"], int) or cfg["trials"] < 1:
        raise UsageError(f"trials must be a positive integer, got {cfg['trials']!r}")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2 ** 64:
        raise UsageError(f"seed must be an unsigned 64-bit integer, got {cfg['seed']!r}")
    cfg["kind"] = kind
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Experiments


def estimate_stability(cfg, workers=1):
    prob = parse_problem(cfg)
    n, rows = int(cfg["n"]), []
    method = cfg.get("method", "both")
    if method not in ("mc", "exact", "both"):
        raise UsageError(f"unknown method {method!r}")
    for eps in _listify(cfg["epsilon"]):
        if method in ("exact", "both"):
            rows.append(estimate_delta_star_exact(prob.learner, prob.dist, n, float(eps),
                                                  seed=cfg["seed"]).as_row(n))
        if method in ("mc", "both"):
            rows.append(estimate_delta_star_mc(prob.learner, prob.dist, n, float(eps), cfg["trials"],
                                               cfg["seed"], workers).as_row(n))
    return ["method", "epsilon", "n", "trials", "estimate", "std_error"], rows


def run_binom_test(cfg, trace_path=None):
    prob = parse_problem(cfg)
    n, n_l, n_u = int(cfg["n"]), int(cfg["n_labeled"]), int(cfg["n_unlabeled"])
    b_train, b_eval = _num(cfg["b_train"]), _num(cfg["b_eval"])
    rng = np.random.default_rng([cfg["seed"], 0])
    labeled, unlabeled = draw_inputs(prob.dist, n_l, n_u, rng)
    strategy = BinomialStrategy(n, float(cfg["epsilon"]), float(cfg["delta"]), float(cfg["alpha"]))
    trace = run_test(strategy, prob.learner, labeled, unlabeled, BudgetLedger(b_train, b_eval),
                     RandomSeed.derive(cfg["seed"], 1).bits, cfg.get("mode", "transparent"))
    if trace_path is not None:
        write_trace_jsonl(trace, trace_path)
    kf = effective_blocks(n, b_train, n_l, n_u)
    th = binomial_thresholds(kf, float(cfg["delta"]), float(cfg["alpha"])) if kf >= 1 else None
    row = {"verdict": trace.verdict, "statistic": trace.statistic, "kappa_floor": kf,
           "k_star": th.k_star if th else "", "a_star": th.a_star if th else "",
           "rounds": len(trace.rounds), "used_train": trace.ledger["used_train"],
           "used_eval": trace.ledger["used_eval"], "refused": int(trace.refused is not None)}
    return list(row), [row]


def power_grid(cfg):
    """Grid points ``(delta_star or None, delta, kappa_floor)`` of a power experiment."""
    out = []
    stars = cfg.get("delta_star")
    for d in _listify(cfg["delta"]):
        for ds in (_listify(stars) if stars is not None else [None]):
            ds = d if ds == "delta" else ds
            for kf in _listify(cfg["kappa_floor"]):
                out.append((None if ds is None else float(ds), float(d), int(kf)))
    return out


def power_point(cfg, prob, delta_star, delta, kf, seed, workers=1):
    """One grid point. ``N_l = kf*n``, ``N_u = kf`` and ``B_train = kf*(2n-1)`` unless set."""
    n, eps, alpha = int(cfg["n"]), float(cfg["epsilon"]), float(cfg["alpha"])
    if delta_star is None:
        learner = prob.learner
        delta_star = estimate_delta_star_exact(learner, prob.dist, n, eps, seed=seed).point_estimate
    else:
        learner = SeedThresholdLearner(prob.dist.space, delta_star)
    n_l = int(cfg.get("n_labeled") or kf * n)
    n_u = int(cfg.get("n_unlabeled") or kf)
    b_train = _num(cfg.get("b_train") or kf * (2 * n - 1))
    res = mc_power(learner, prob.dist, n, eps, delta, alpha, n_l, n_u, b_train, cfg["trials"], seed,
                   workers=workers, engine=cfg.get("engine", "vectorized"))
    kf_eff = effective_blocks(n, b_train, n_l, n_u)
    cf = power_closed_form(alpha, delta_star, delta, kf_eff)
    sp = prob.dist.space
    t1 = theorem1_bound(PowerBoundInputs(alpha, delta, delta_star, n, n_l, n_u, b_train,
                                         x_size=sp.x_size, y_size=sp.y_size))
    return {"delta_star": delta_star, "delta": delta, "kappa_floor": kf_eff, "alpha": alpha,
            "mc_power": res.rate, "closed_form": cf.value, "closed_form_applies": int(cf.closed_form),
            "std_error": res.std_error, "trials": res.trials, "n": n, "n_labeled": n_l,
            "n_unlabeled": n_u, "b_train": b_train, "theorem1_min": t1.minimum}


def power_experiment(cfg, workers=1):
    prob = parse_problem(cfg)
    rows = [power_point(cfg, prob, ds, d, kf, RandomSeed.derive(cfg["seed"], i).bits, workers)
            for i, (ds, d, kf) in enumerate(power_grid(cfg))]
    return list(rows[0]), rows


def adversarial_demo(cfg, workers=1):
    prob = parse_problem(cfg)
    n, eps, delta = int(cfg["n"]), float(cfg["epsilon"]), float(cfg["delta"])
    target = int(cfg["target"])
    ds = estimate_delta_star_exact(prob.learner, prob.dist, n, eps).point_estimate
    rows = []
    for ki, kind in enumerate(_listify(cfg["kinds"])):
        if kind not in adv.KINDS:
            raise UsageError(f"unknown adversarial kind {kind!r}; expected one of {adv.KINDS}")
        c0 = adv.critical_c(kind, n, delta, ds)
        cs = cfg.get("c") or [min(c0 + o, 1.0) for o in _listify(cfg["c_offsets"])]
        for ci, c in enumerate(_listify(cs)):
            rep = adv.adversarial_instability(prob.learner, prob.dist, kind, target, float(c), n, eps)
            held, agree = adv.coupling_agreement(
                prob.learner, prob.dist, kind, target, float(c), n, eps, delta, float(cfg["alpha"]),
                int(cfg["n_labeled"]), int(cfg["n_unlabeled"]), cfg["trials"],
                RandomSeed.derive(cfg["seed"], 1000 * ki + ci).bits)
            rows.append({"kind": kind, "c": float(c), "critical_c": c0, "n": n,
                         "base_delta_star": ds, "lower_bound": rep.lower_bound,
                         "exact_instability": rep.exact_instability, "coupled_runs": cfg["trials"],
                         "event_runs": held,
                         "coupled_verdict_agreement_rate": agree / held if held else ""})
    return list(rows[0]), rows


BOUND_KEYS = ("alpha", "delta", "delta_star", "n", "n_labeled", "n_unlabeled", "b_train", "b_eval",
              "x_size", "y_size")


def bounds_table(cfg, workers=1):
    grids = [[_num(v) for v in _listify(cfg[k])] for k in BOUND_KEYS]
    C = cfg.get("C")
    rows = []
    for vals in itertools.product(*grids):
        p = dict(zip(BOUND_KEYS, vals))
        p["n"] = int(p["n"])
        inp = PowerBoundInputs(**p)
        t3 = theorem3_bound(inp)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if C is not None else "default")
            t2 = theorem2_bound(inp, C=None if C is None else float(C))
        kf = effective_blocks(inp.n, inp.b_train, int(inp.n_labeled), int(inp.n_unlabeled))
        cf = power_closed_form(inp.alpha, inp.delta_star, inp.delta, kf) if kf >= 1 else None
        rows.append({**p, "delta_tilde": inp.delta_tilde, "computational": t3.computational,
                     "y_term": t3.y_term, "x_term": t3.x_term, "minimum": min(t3.computational, t3.y_term, t3.x_term),
                     "eval_term": t3.eval_term, "minimum_black_box": t3.minimum,
                     "C": 1.0 if C is None else float(C), "theorem2": t2.value,
                     "theorem2_applicable": int(t2.applicable),
                     "kappa_floor": kf, "closed_form": cf.value if cf else 0.0})
    return list(rows[0]), rows


def lemma_check(cfg, workers=1):
    rng = np.random.default_rng(cfg["seed"])
    trials, rows = cfg["trials"], []
    for M in _listify(cfg["M"]):
        for f in _listify(cfg["gamma_fractions"]):
            rep = partition_suite(M, float(f) / (M - 1), trials, rng)
            rows.append({"lemma": "partition", "M": M, "gamma": rep.gamma, "n": "", "cases": rep.cases,
                         "violations": rep.violations, "worst_ratio": rep.worst_ratio})
    for M in _listify(cfg["multinomial_M"]):
        rep = multinomial_suite(M, int(cfg["n_max"]), rng.dirichlet(np.ones(M), size=trials))
        rows.append({"lemma": "multinomial", "M": M, "gamma": "", "n": int(cfg["n_max"]),
                     "cases": rep.cases, "violations": rep.violations, "worst_ratio": rep.worst_ratio})
    reports = [data_counts_bound_check(FiniteDistribution.uniform(Space(int(xs), int(ys))), int(n), 6)
               for xs, ys in cfg["data_counts_spaces"] for n in _listify(cfg["data_counts_n"])]
    if reports:
        rows.append({"lemma": "data_counts", "M": 6, "gamma": "", "n": max(r.n for r in reports),
                     "cases": len(reports), "violations": sum(not r.holds for r in reports),
                     "worst_ratio": max(r.exact_max / r.bound for r in reports)})
    return ["lemma", "M", "gamma", "n", "cases", "violations", "worst_ratio"], rows


RUNNERS = {
    "estimate-stability": estimate_stability,
    "power-experiment": power_experiment,
    "adversarial-demo": adversarial_demo,
    "bounds": bounds_table,
    "lemma-check": lemma_check,
}


# --------------------------------------------------------------------------
# Output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) else repr(float(v))
    return "" if v is None else str(v)


def render(cfg: dict, columns: list[str], rows: list[dict], fmt: str = "csv",
           group: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# kind={cfg['kind']}\n# seed={cfg['seed']}\n# config_sha256={config_hash(cfg)}\n")
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
        return buf.getvalue()
    # gnuplot data: whitespace columns, blocks split by two blank lines
    buf.write("# " + " ".join(columns) + "\n")
    for i, r in enumerate(rows):
        if group and i and r.get(group) != rows[i - 1].get(group):
            buf.write("\n\n")
        buf.write(" ".join(_fmt(r.get(c)) or "NaN" for c in columns) + "\n")
    return buf.getvalue()


PLOT_GROUP = {"power-experiment": "delta_star", "adversarial-demo": "kind",
              "estimate-stability": "method", "lemma-check": "lemma"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stabtest",
                                description="Black-box stability testing experiments.")
    p.add_argument("kind", help="one of: " + ", ".join(KINDS))
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--trials", type=int, help="Monte-Carlo trials / coupled runs / random cases")
    p.add_argument("--workers", type=int, default=1, help="worker processes (output does not depend on it)")
    p.add_argument("--out", type=Path, help="output table (default: stdout)")
    p.add_argument("--format", choices=("csv", "plot"), default="csv",
                   help="csv, or whitespace plot-data blocks for gnuplot")
    p.add_argument("--figure", type=Path, help="also render a PNG figure of the table")
    p.add_argument("--trace", type=Path, help="run-binom-test: JSON-lines trace path")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        doc = None
        if args.config is not None:
            try:
                doc = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                print(f"stabtest: configuration error: cannot read {args.config}: {exc}", file=sys.stderr)
                return 3
        cfg = resolve_config(args.kind, doc, args.seed, args.trials)
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        if args.kind == "run-binom-test":
            trace = args.trace or (args.out.with_suffix(".trace.jsonl") if args.out else None)
            columns, rows = run_binom_test(cfg, trace)
            print(f"verdict={rows[0]['verdict']}" + (f" trace={trace}" if trace else ""),
                  file=sys.stderr)
        else:
            if args.trace is not None:
                raise UsageError("--trace applies to run-binom-test only")
            columns, rows = RUNNERS[args.kind](cfg, workers=args.workers)
        if args.figure is not None:
            from .plotting import FIGURES
            if args.kind not in FIGURES:
                raise UsageError(f"no figure for {args.kind}")
            FIGURES[args.kind](rows, args.figure)
    except UsageError as exc:
        parser.error(str(exc))
    except StabTestError as exc:
        print(f"stabtest: configuration error: {exc}", file=sys.stderr)
        return 3
    text = render(cfg, columns, rows, args.format, PLOT_GROUP.get(args.kind))
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
