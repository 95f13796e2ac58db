"""Static SVG charts. Pure functions of the result rows, so they can be regenerated from CSV."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .results import check_complete  # noqa: E402

ORDERINGS = ("oracle", "nmc-upper")


def _svg_rc():
    return {"svg.hashsalt": "amortized-eig", "svg.fonttype": "none", "path.simplify": False}


def series(rows, ordering: str):
    """Per-estimator (mean, std) arrays in sorted design order, plus the order itself."""
    if ordering not in ORDERINGS:
        raise ValueError(f"ordering must be one of {ORDERINGS}")
    designs, ests, _ = check_complete(rows)
    n_d = len(designs)
    vals: dict[str, list[list[float]]] = {}
    for r in rows:
        vals.setdefault(r.estimator, [[] for _ in range(n_d)])[r.design].append(r.value)
    if ordering not in vals:
        raise ValueError(f"no {ordering!r} rows to sort by")
    key = np.array([np.mean(v) for v in vals[ordering]])
    order = np.argsort(key, kind="stable")
    out = {}
    for est, per in vals.items():
        mean = np.array([np.mean(per[i]) for i in order])
        std = np.array([np.std(per[i], ddof=1) if len(per[i]) > 1 else 0.0 for i in order])
        out[est] = (mean, std)
    return order, out


def emit_chart(rows, ordering: str, path, title: str = "") -> Path:
    """Line chart, x = sorted design index, one series per estimator with a +-1 sd band."""
    path = Path(path)
    _, data = series(rows, ordering)
    with plt.rc_context(_svg_rc()):
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        for est in sorted(data):
            mean, std = data[est]
            x = np.arange(len(mean))
            if est == "oracle":
                ax.plot(x, mean, color="black", lw=1.6, label="oracle")
                continue
            (line,) = ax.plot(x, mean, lw=1.0, label=est)
            ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xlabel(f"design (sorted by {ordering})")
        ax.set_ylabel("EIG (nats)")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=8, frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_trace_chart(traces: dict, path, window: int = 50) -> Path:
    """Moving-average loss curves, one per architecture variant."""
    path = Path(path)
    with plt.rc_context(_svg_rc()):
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        for name in sorted(traces):
            loss = np.asarray(traces[name], float)
            w = min(window, len(loss))
            smooth = np.convolve(loss, np.ones(w) / w, mode="valid")
            ax.plot(np.arange(w - 1, len(loss)), smooth, lw=1.0, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel(f"loss ({window}-step mean, nats)")
        ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
