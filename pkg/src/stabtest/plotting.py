"""Static figures for experiment tables.

Each function takes the rows an experiment writes to CSV and saves one PNG.
The Agg backend is forced and the PNG metadata is pinned, so reruns give
identical files.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def _grouped(rows, key):
    groups = defaultdict(list)
    for r in rows:
        groups[key(r)].append(r)
    return groups


def power_figure(rows, path):
    """Monte-Carlo power with 3-SE bars against the closed form, per ``(delta*, delta)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        groups = _grouped(rows, lambda r: (r["delta_star"], r["delta"]))
        for i, ((ds, d), grp) in enumerate(sorted(groups.items())):
            grp = sorted(grp, key=lambda r: r["kappa_floor"])
            k = [r["kappa_floor"] for r in grp]
            color = f"C{i % 10}"
            ax.errorbar(k, [r["mc_power"] for r in grp], yerr=[3 * r["std_error"] for r in grp],
                        fmt="o", ms=3, color=color, capsize=2,
                        label=f"delta*={ds:g}, delta={d:g}")
            ax.plot(k, [r["closed_form"] for r in grp], "-", lw=0.8, color=color)
            if "theorem1_min" in grp[0]:
                ax.plot(k, [r["theorem1_min"] for r in grp], ":", lw=0.8, color=color)
        ax.set_xlabel("floor(kappa)")
        ax.set_ylabel("rejection rate")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)


def adversarial_figure(rows, path):
    """Exact instability of the wrapped learner and its lower bound against ``c``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (kind, grp) in enumerate(sorted(_grouped(rows, lambda r: r["kind"]).items())):
            grp = sorted(grp, key=lambda r: r["c"])
            c = [r["c"] for r in grp]
            ax.plot(c, [r["exact_instability"] for r in grp], "o-", ms=3, color=f"C{i}", label=kind)
            ax.plot(c, [r["lower_bound"] for r in grp], "--", lw=0.8, color=f"C{i}")
        ax.set_xlabel("mixture weight c")
        ax.set_ylabel("instability")
        ax.legend(frameon=False)
        return _save(fig, path)


def stability_figure(rows, path):
    """Estimated instability against ``epsilon``, one line per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (method, grp) in enumerate(sorted(_grouped(rows, lambda r: r["method"]).items())):
            grp = sorted(grp, key=lambda r: r["epsilon"])
            ax.errorbar([r["epsilon"] for r in grp], [r["estimate"] for r in grp],
                        yerr=[3 * r["std_error"] for r in grp], fmt="o-", ms=3, capsize=2,
                        color=f"C{i}", label=method)
        ax.set_xlabel("epsilon")
        ax.set_ylabel("instability")
        ax.legend(frameon=False)
        return _save(fig, path)


def bounds_figure(rows, path):
    """Theorem terms against the training budget."""
    cols = [("computational", "computational"), ("y_term", "Y-limited"),
            ("x_term", "X-limited"), ("eval_term", "evaluation"), ("closed_form", "binomial test")]
    rows = sorted(rows, key=lambda r: r["b_train"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        b = [r["b_train"] for r in rows]
        for col, label in cols:
            ax.plot(b, [min(r[col], 1.0) for r in rows], "o-", ms=3, label=label)
        ax.set_xlabel("B_train")
        ax.set_ylabel("power ceiling (capped at 1)")
        ax.legend(frameon=False)
        return _save(fig, path)


def lemma_figure(rows, path):
    """Worst observed value over bound, per lemma and ``M``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (lemma, grp) in enumerate(sorted(_grouped(rows, lambda r: r["lemma"]).items())):
            ax.plot([r["M"] for r in grp], [r["worst_ratio"] for r in grp], "o", ms=4,
                    color=f"C{i}", label=lemma)
        ax.axhline(1.0, color="k", lw=0.6)
        ax.set_xlabel("M")
        ax.set_ylabel("worst value / bound")
        ax.legend(frameon=False)
        return _save(fig, path)


FIGURES = {
    "power-experiment": power_figure,
    "adversarial-demo": adversarial_figure,
    "estimate-stability": stability_figure,
    "bounds": bounds_figure,
    "lemma-check": lemma_figure,
}
