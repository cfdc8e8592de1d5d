"""Matplotlib renderings of experiment and numerics outputs.

Each helper writes one PNG next to the delimited output of the owning CLI
subcommand.  The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _ecdf(ax, x, **kw):
    x = np.sort(np.asarray(x, dtype=float))
    ax.step(x, np.arange(1, len(x) + 1) / len(x), where="post", **kw)


def save_ecdf_overlay(samples: dict, limit_values: dict, path: str, title: str = "") -> str:
    """Empirical CDFs of normalized simulated samples against limit samples.

    `samples` maps (t, u) -> array; `limit_values` maps u -> array.  One
    panel per u, showing every t plus the limit reference.
    """
    us = sorted({u for (_, u) in samples})
    if not us:
        us = sorted(limit_values)
    fig, axes = plt.subplots(1, max(len(us), 1), figsize=(5 * max(len(us), 1), 4),
                             squeeze=False)
    for ax, u in zip(axes[0], us):
        for (t, uu), vals in sorted(samples.items()):
            if uu == u:
                _ecdf(ax, vals, label=f"simulated t={t:g}", alpha=0.8)
        if u in limit_values:
            _ecdf(ax, limit_values[u], label="limit", color="black", linewidth=2)
        lo, hi = np.percentile(
            np.concatenate([v for (tt, uu), v in samples.items() if uu == u]
                           + ([limit_values[u]] if u in limit_values else [])),
            [0.5, 99.5])
        ax.set_xlim(lo, hi)
        ax.set_title(f"u = {u:g}")
        ax.set_xlabel("normalized value")
        ax.set_ylabel("ECDF")
        ax.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_trend(trends: dict, t_grid, path: str, title: str = "KS distance over t") -> str:
    """KS distance D per u across the time grid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for u, entry in sorted(trends.items(), key=lambda kv: float(kv[0])):
        ds = entry["D_values"]
        ts = list(t_grid)[:len(ds)]
        pts = [(t, d) for t, d in zip(ts, ds) if d is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=f"u={u}")
    ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("KS distance D")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_numerics(tables: dict, path: str, title: str = "renewal numerics") -> str:
    """U, V and the V_j convolution powers on one log-scale panel."""
    fig, ax = plt.subplots(figsize=(6, 4))
    U, V = tables["U"], tables["V"]
    ax.plot(U.grid, U.values, label="U")
    ax.plot(V.grid, V.values, label="V")
    for j, Vj in enumerate(tables.get("Vj", []), start=1):
        if j >= 2:
            ax.plot(Vj.grid, Vj.values, label=f"V_{j}", alpha=0.7)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_limit_distribution(values_by_u: dict, path: str,
                            title: str = "limit functional samples") -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for u, vals in sorted(values_by_u.items()):
        _ecdf(ax, vals, label=f"u={u:g}")
    ax.set_xlabel("value")
    ax.set_ylabel("ECDF")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
