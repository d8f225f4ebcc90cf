"""Success-probability figures drawn from aggregate experiment tables."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_success"]

_KEYS = ("model", "n", "d", "D", "epsilon", "regime")


def _series_key(s, x):
    parts = [s.label] if s.label else []
    parts += [f"{k}={getattr(s, k)}" for k in _KEYS if k != x]
    return ", ".join(parts)


def plot_success(summaries, path, x="n", title=None):
    """Plot p_hat with 1-SE error bars against column ``x``; one line per series.

    Series are the distinct combinations of the remaining grid columns.
    Cells without completed trials are left out.
    """
    series = {}
    for s in summaries:
        if s.trials == 0 or math.isnan(s.p_hat):
            continue
        series.setdefault(_series_key(s, x), []).append(s)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name, rows in series.items():
        rows = sorted(rows, key=lambda s: getattr(s, x))
        xs = [getattr(s, x) for s in rows]
        ax.errorbar(xs, [s.p_hat for s in rows], yerr=[s.se for s in rows],
                    marker="o", capsize=3, label=name)
    ax.set_xlabel(x)
    ax.set_ylabel("success probability")
    ax.set_ylim(-0.05, 1.05)
    if title:
        ax.set_title(title)
    if series:
        ax.legend(fontsize="x-small")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
