"""Figures written next to the sweep/analysis CSVs.

Rendering happens off-screen (Agg). Every function takes the same rows that
were written to CSV and returns the path of the saved image.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "pgkd",
}

COLORS = {"teacher": "#444444", "vanilla": "#9e9e9e", "glnn": "#1f77b4", "pgkd": "#d62728"}
LABELS = {"teacher": "GNN teacher", "vanilla": "MLP", "glnn": "GLNN", "pgkd": "PGKD"}


def _grouped(rows, key, metric):
    xs = sorted({r[key] for r in rows})
    means, stds = [], []
    for x in xs:
        vals = np.array([r[metric] for r in rows if r[key] == x and r[metric] is not None], dtype=float)
        means.append(vals.mean() if vals.size else np.nan)
        stds.append(vals.std() if vals.size else np.nan)
    return np.array(xs, dtype=float), np.array(means), np.array(stds)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def _accuracy_lines(rows, key, models, xlabel, title, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for m in models:
            col = f"{m}_acc"
            if not rows or col not in rows[0]:
                continue
            x, mean, std = _grouped(rows, key, col)
            ax.plot(x, 100 * mean, marker="o", ms=3, color=COLORS[m], label=LABELS[m])
            ax.fill_between(x, 100 * (mean - std), 100 * (mean + std), color=COLORS[m], alpha=0.15, lw=0)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("test accuracy (%)")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_noise_sweep(rows, path, title="feature noise") -> Path:
    return _accuracy_lines(rows, "alpha", ("teacher", "glnn", "pgkd"), r"noise level $\alpha$", title, path)


def plot_ratio_sweep(rows, path, title="inductive split ratio") -> Path:
    return _accuracy_lines(rows, "ratio", ("teacher", "glnn", "pgkd"), "split ratio", title, path)


def plot_capacity_sweep(rows, path, title="student capacity") -> Path:
    settings = sorted({(r["layers"], r["width"]) for r in rows})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(settings) + 1.5), 3.0))
        width = 0.27
        for j, m in enumerate(("vanilla", "glnn", "pgkd")):
            means = [np.mean([r[f"{m}_acc"] for r in rows if (r["layers"], r["width"]) == s]) for s in settings]
            ax.bar(np.arange(len(settings)) + (j - 1) * width, 100 * np.array(means), width,
                   color=COLORS[m], label=LABELS[m])
        ax.set_xticks(np.arange(len(settings)))
        ax.set_xticklabels([f"L={l}\nH={w}" for l, w in settings])
        ax.set_ylabel("test accuracy (%)")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_grid(summary, path, title="lambda grid") -> Path:
    l1s = sorted({r["lambda1"] for r in summary})
    l2s = sorted({r["lambda2"] for r in summary})
    mat = np.full((len(l1s), len(l2s)), np.nan)
    for r in summary:
        mat[l1s.index(r["lambda1"]), l2s.index(r["lambda2"])] = 100 * r["test_mean"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2 + 0.4 * len(l2s), 2.4 + 0.3 * len(l1s)))
        im = ax.imshow(mat, cmap="viridis", aspect="auto")
        for i in range(len(l1s)):
            for j in range(len(l2s)):
                if np.isfinite(mat[i, j]):
                    ax.text(j, i, f"{mat[i, j]:.1f}", ha="center", va="center", color="w", fontsize=8)
        ax.set_xticks(range(len(l2s)))
        ax.set_xticklabels([f"{v:g}" for v in l2s])
        ax.set_yticks(range(len(l1s)))
        ax.set_yticklabels([f"{v:g}" for v in l1s])
        ax.set_xlabel(r"$\lambda_2$")
        ax.set_ylabel(r"$\lambda_1$")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, label="mean test accuracy (%)")
        return _save(fig, path)


def plot_structure(metrics: dict, path, title="class distance vs inter-class edges") -> Path:
    """``metrics`` maps a model label to a :class:`pgkd.analysis.StructureMetrics`."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(2.6 * len(metrics), 2.6), squeeze=False)
        for ax, (name, m) in zip(axes[0], metrics.items()):
            edges = [p["inter_edges"] for p in m.pairs]
            dists = [p["distance"] for p in m.pairs]
            ax.scatter(edges, dists, s=12, color=COLORS.get(name, "k"))
            ax.set_title(f"{LABELS.get(name, name)}  rho={m.spearman_rho:.2f}")
            ax.set_xlabel("inter-class edges")
        axes[0][0].set_ylabel("prototype L2 distance")
        fig.suptitle(title)
        return _save(fig, path)
