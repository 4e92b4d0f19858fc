"""Structure metrics, robustness sweeps and embedding export."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models as M
from . import rng
from .graph import INDUCTIVE, Graph, SplitSpec, classify_edges, make_split
from .training import GLNN, PGKD, VANILLA, TrainConfig, distill_student, teacher_signals, train_teacher


def connected_node_distance(h: np.ndarray, edges: np.ndarray) -> float:
    """Mean L2 distance between the endpoints of each undirected edge."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        return 0.0
    diff = h[edges[:, 0]] - h[edges[:, 1]]
    return float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).mean())


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> tuple[float, bool]:
    """Spearman rho with average-rank ties. Returns ``(rho, degenerate)``;
    degenerate inputs (constant ranks or fewer than 2 points) give ``(0.0, True)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return 0.0, True
    rx = average_ranks(x) - (x.size + 1) / 2.0
    ry = average_ranks(y) - (y.size + 1) / 2.0
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        return 0.0, True
    rho = float(rx @ ry) / np.sqrt(sxx * syy)
    return float(np.clip(rho, -1.0, 1.0)), False


@dataclass
class StructureMetrics:
    avg_connected_l2: float
    spearman_rho: float
    degenerate: bool
    pairs: list[dict] = field(default_factory=list)


def class_prototypes(h: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean row per class over all nodes (ground truth); returns ``(prototypes, counts)``."""
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, h.shape[1]))
    np.add.at(sums, labels, h)
    return sums / np.maximum(counts, 1)[:, None], counts


def inter_class_spearman(h: np.ndarray, labels: np.ndarray, edges: np.ndarray, k: int) -> StructureMetrics:
    """Rank correlation between prototype distance and inter-class edge count over
    unordered class pairs with both classes non-empty."""
    labels = np.asarray(labels, dtype=np.int64)
    protos, counts = class_prototypes(h, labels, k)
    g = Graph(np.zeros((labels.size, 1)), labels, edges, k)
    tally = classify_edges(g)
    pairs = []
    for a in range(k):
        for b in range(a + 1, k):
            if counts[a] == 0 or counts[b] == 0:
                continue
            pairs.append({
                "class_a": a, "class_b": b,
                "distance": float(np.linalg.norm(protos[a] - protos[b])),
                "inter_edges": int(tally.inter[a, b]),
            })
    rho, degenerate = spearman([p["distance"] for p in pairs], [p["inter_edges"] for p in pairs])
    return StructureMetrics(connected_node_distance(h, g.edges), rho, degenerate, pairs)


# -- sweeps ------------------------------------------------------------------------

def perturb_features(x: np.ndarray, alpha: float, seed: int) -> np.ndarray:
    """``(1 - alpha) X + alpha * eps`` with eps standard normal per entry scaled by
    the per-column standard deviation of X. ``alpha == 0`` returns X unchanged."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return x
    eps = rng.stream(seed, "noise").standard_normal(x.shape) * x.std(axis=0)[None, :]
    return (1.0 - alpha) * x + alpha * eps


def _three_way(g: Graph, split: SplitSpec, cfg: TrainConfig, methods=(GLNN, PGKD)) -> dict:
    teacher, trec = train_teacher(g, split, cfg)
    signals = teacher_signals(g, split, teacher)
    row = {"teacher_acc": trec.test_acc}
    for m in methods:
        _, rec = distill_student(g, split, None, cfg, signals=signals, method=m)
        row[f"{m}_acc"] = rec.test_acc
    return row


def _pool_map(fn, cells, jobs: int):
    if jobs <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


NOISE_COLUMNS = ["alpha", "seed", "teacher_acc", "glnn_acc", "pgkd_acc"]


def noise_sweep(g: Graph, split: SplitSpec, cfg: TrainConfig, alphas, seeds, jobs: int = 1) -> list[dict]:
    """Retrain teacher, GLNN and PGKD on noised features for each (alpha, seed)."""
    def cell(c):
        alpha, seed = c
        noisy = g.with_features(perturb_features(g.features, alpha, seed))
        return {"alpha": float(alpha), "seed": int(seed), **_three_way(noisy, split, cfg.replace(seed=seed))}

    return _pool_map(cell, [(a, s) for a in alphas for s in seeds], jobs)


RATIO_COLUMNS = ["ratio", "seed", "n_test_ind", "teacher_acc", "glnn_acc", "pgkd_acc"]


def split_ratio_sweep(g: Graph, cfg: TrainConfig, ratios, seeds, split_kwargs: dict | None = None,
                      jobs: int = 1) -> list[dict]:
    """Inductive runs with ``|test_ind| / |unlabeled| = ratio``; the split seed is the run seed."""
    split_kwargs = dict(split_kwargs or {})

    def cell(c):
        ratio, seed = c
        split = make_split(g, INDUCTIVE, ind_ratio=ratio, seed=seed, **split_kwargs)
        return {"ratio": float(ratio), "seed": int(seed), "n_test_ind": int(split.test_ind.size),
                **_three_way(g, split, cfg.replace(seed=seed))}

    return _pool_map(cell, [(r, s) for r in ratios for s in seeds], jobs)


CAPACITY_COLUMNS = ["layers", "width", "param_count", "seed", "vanilla_acc", "glnn_acc", "pgkd_acc"]


def capacity_sweep(g: Graph, split: SplitSpec, settings, seeds, cfg: TrainConfig, jobs: int = 1) -> list[dict]:
    """Student MLPs of each (layers, width) trained without KD, with GLNN and with PGKD.
    The teacher is trained once per seed."""
    signals = {}
    teacher_acc = {}
    for seed in seeds:
        teacher, trec = train_teacher(g, split, cfg.replace(seed=seed))
        signals[seed] = teacher_signals(g, split, teacher)
        teacher_acc[seed] = trec.test_acc

    def cell(c):
        (layers, width), seed = c
        ccfg = cfg.replace(seed=seed, student_layers=int(layers), student_hidden=int(width))
        dims = [g.d] + [int(width)] * (int(layers) - 1) + [g.k]
        row = {"layers": int(layers), "width": int(width), "param_count": M.param_count(M.MLP, dims),
               "seed": int(seed), "teacher_acc": teacher_acc[seed]}
        for m in (VANILLA, GLNN, PGKD):
            _, rec = distill_student(g, split, None, ccfg, signals=signals[seed], method=m)
            row[f"{m}_acc"] = rec.test_acc
        return row

    return _pool_map(cell, [(s, seed) for s in settings for seed in seeds], jobs)


def aggregate(rows: list[dict], key: str, metrics) -> list[dict]:
    """Mean and population std of ``metrics`` grouped by ``key``, in first-seen order."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r)
    out = []
    for kval, rs in groups.items():
        agg = {key: kval, "n": len(rs)}
        for m in metrics:
            vals = np.array([r[m] for r in rs], dtype=np.float64)
            agg[f"{m}_mean"] = float(vals.mean())
            agg[f"{m}_std"] = float(vals.std())
        out.append(agg)
    return out


# -- embeddings ---------------------------------------------------------------------

def representations(params: M.ModelParams, g: Graph, which: str = "hidden") -> np.ndarray:
    logits, hidden = M.predict(params, g.features, g if params.kind != M.MLP else None)
    if which == "hidden":
        return hidden
    if which == "logits":
        return logits
    raise ValueError(f"unknown representation {which!r}")


def export_embeddings(params: M.ModelParams, g: Graph, path, which: str = "hidden") -> np.ndarray:
    """Write ``node_id,label,h_1..h_H`` rows with 17 significant digits; returns the matrix."""
    h = representations(params, g, which)
    cols = ["node_id", "label"] + [f"h{i + 1}" for i in range(h.shape[1])]
    with open(Path(path), "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(h.shape[0]):
            fh.write(f"{i},{int(g.labels[i])}," + ",".join(format(v, ".17g") for v in h[i]) + "\n")
    return h


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`export_embeddings`: ``(node_ids, labels, matrix)``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2:]
