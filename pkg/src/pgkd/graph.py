"""Graph data model, adjacency operators, splits and edge taxonomy."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import rng
from .errors import ConfigError, ContractError, DataError

TRANSDUCTIVE = "transductive"
INDUCTIVE = "inductive"
SETTINGS = (TRANSDUCTIVE, INDUCTIVE)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def canonical_edges(edges, n: int) -> np.ndarray:
    """Symmetrize, drop self-loops and duplicates; return sorted ``(u, v)`` rows with ``u < v``."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise DataError(f"edge ({bad[0]}, {bad[1]}) has an endpoint outside [0, {n})")
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if e.size:
        e = np.unique(e, axis=0)
    return e.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected node-classification graph.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``.
    Arrays are read-only; derive a new graph instead of mutating one.
    """

    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    k: int
    name: str = "graph"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if y.size != x.shape[0]:
            raise DataError(f"{y.size} labels for {x.shape[0]} nodes")
        if y.size and (y.min() < 0 or y.max() >= self.k):
            raise DataError(f"label outside [0, {self.k})")
        if not np.isfinite(x).all():
            raise DataError("features contain non-finite values")
        object.__setattr__(self, "features", _frozen(x.copy()))
        object.__setattr__(self, "labels", _frozen(y.copy()))
        object.__setattr__(self, "edges", _frozen(canonical_edges(self.edges, x.shape[0])))
        object.__setattr__(self, "k", int(self.k))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        n = self.n
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * u.size)
        a = sp.csr_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
        a.sort_indices()
        return a

    def degrees(self) -> np.ndarray:
        return np.asarray(self.csr.sum(axis=1)).reshape(-1)

    def with_features(self, features) -> "Graph":
        return Graph(features, self.labels, self.edges, self.k, self.name)

    def with_edges(self, edges) -> "Graph":
        return Graph(self.features, self.labels, edges, self.k, self.name)


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    """GCN propagation matrix ``D^-1/2 (A + I) D^-1/2`` with D the degree of A + I."""
    a_hat = g.csr + sp.identity(g.n, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).reshape(-1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = a_hat.tocoo()
    vals = inv_sqrt[coo.row] * coo.data * inv_sqrt[coo.col]
    out = sp.csr_matrix((vals, (coo.row, coo.col)), shape=a_hat.shape)
    out.sort_indices()
    return out


def neighbor_mean_operator(g: Graph) -> sp.csr_matrix:
    """Row-normalized adjacency without self-loops; isolated nodes get an all-zero row."""
    deg = g.degrees()
    inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    return sp.csr_matrix(sp.diags(inv) @ g.csr)


@dataclass(frozen=True, eq=False)
class SplitSpec:
    """Disjoint node sets: train, val, test_obs and test_ind cover every node.

    ``val``, ``test_obs`` and ``test_ind`` together are the unlabeled nodes.
    ``test_ind`` is empty in the transductive setting.
    """

    setting: str
    train: np.ndarray
    val: np.ndarray
    test_obs: np.ndarray
    test_ind: np.ndarray
    ind_ratio: float = 0.0
    seed: int | None = None
    n: int = field(default=0)

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}", key="setting")
        sets = {}
        for name in ("train", "val", "test_obs", "test_ind"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
            sets[name] = arr
            object.__setattr__(self, name, _frozen(arr))
        allids = np.concatenate(list(sets.values()))
        n = self.n or allids.size
        object.__setattr__(self, "n", int(n))
        if allids.size != n or not np.array_equal(np.sort(allids), np.arange(n)):
            raise DataError("split sets must partition the node ids without overlap")
        if self.setting == TRANSDUCTIVE and sets["test_ind"].size:
            raise DataError("transductive split cannot have inductive test nodes")

    @property
    def test(self) -> np.ndarray:
        """All test nodes (observed and inductive)."""
        return np.sort(np.concatenate([self.test_obs, self.test_ind]))

    @property
    def unlabeled(self) -> np.ndarray:
        return np.sort(np.concatenate([self.val, self.test_obs, self.test_ind]))

    @property
    def observed(self) -> np.ndarray:
        """Nodes visible during training."""
        return np.sort(np.concatenate([self.train, self.val, self.test_obs]))

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "ind_ratio": self.ind_ratio,
            "seed": self.seed,
            "n": self.n,
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test_obs": self.test_obs.tolist(),
            "test_ind": self.test_ind.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(d["setting"], d["train"], d["val"], d["test_obs"], d["test_ind"],
                   float(d.get("ind_ratio", 0.0)), d.get("seed"), int(d.get("n", 0)))


def _draw_inductive(pool: np.ndarray, n_unlabeled: int, setting: str, ind_ratio: float):
    if not 0.0 <= ind_ratio <= 1.0:
        raise ConfigError(f"ind_ratio must lie in [0, 1], got {ind_ratio}", key="ind_ratio")
    if setting != INDUCTIVE:
        return pool[:0], pool
    n_ind = int(round(ind_ratio * n_unlabeled))
    if n_ind > pool.size:
        raise ConfigError(
            f"ind_ratio {ind_ratio} needs {n_ind} inductive nodes but only {pool.size} are eligible",
            key="ind_ratio",
        )
    return pool[:n_ind], pool[n_ind:]


def make_split(
    g: Graph,
    setting: str = TRANSDUCTIVE,
    *,
    label_rate: float | None = None,
    train_per_class: int | None = None,
    val_rate: float = 0.2,
    ind_ratio: float = 0.0,
    seed: int = 0,
) -> SplitSpec:
    """Seeded random split.

    Train nodes are either ``train_per_class`` per class or a ``label_rate``
    fraction of all nodes (``train_per_class=20`` when neither is given).
    Among the unlabeled nodes, in shuffled order, the first
    ``round(ind_ratio * |unlabeled|)`` become inductive test nodes (inductive
    setting only), the next ``round(val_rate * |unlabeled|)`` become
    validation nodes and the rest observed test nodes. An ``ind_ratio`` of 0
    therefore yields the transductive partition for the same seed.
    """
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}", key="setting")
    if not 0.0 <= val_rate < 1.0:
        raise ConfigError(f"val_rate must lie in [0, 1), got {val_rate}", key="val_rate")
    order = rng.stream(seed, "split").permutation(g.n)
    if label_rate is not None:
        if not 0.0 < label_rate < 1.0:
            raise ConfigError(f"label_rate must lie in (0, 1), got {label_rate}", key="label_rate")
        n_train = int(round(label_rate * g.n))
        is_train = np.zeros(g.n, dtype=bool)
        is_train[order[:n_train]] = True
    else:
        per_class = 20 if train_per_class is None else int(train_per_class)
        if per_class < 1:
            raise ConfigError("train_per_class must be positive", key="train_per_class")
        taken = np.zeros(g.k, dtype=np.int64)
        is_train = np.zeros(g.n, dtype=bool)
        for v in order:
            c = g.labels[v]
            if taken[c] < per_class:
                taken[c] += 1
                is_train[v] = True
    train = order[is_train[order]]
    unlabeled = order[~is_train[order]]
    if train.size == 0:
        raise ConfigError("split leaves no training nodes", key="label_rate")
    test_ind, rest = _draw_inductive(unlabeled, unlabeled.size, setting, ind_ratio)
    n_val = min(int(round(val_rate * unlabeled.size)), rest.size)
    val, test_obs = rest[:n_val], rest[n_val:]
    if test_obs.size + test_ind.size == 0:
        raise ConfigError("split leaves no test nodes", key="label_rate")
    return SplitSpec(setting, train, val, test_obs, test_ind, float(ind_ratio), seed, g.n)


def split_from_ids(
    g: Graph,
    train,
    val,
    test,
    setting: str = TRANSDUCTIVE,
    ind_ratio: float = 0.0,
    seed: int = 0,
) -> SplitSpec:
    """Split from explicit id lists. Nodes in none of the lists join the observed test set;
    inductive nodes are drawn from the test ids."""
    train = np.unique(np.asarray(train, dtype=np.int64))
    val = np.unique(np.asarray(val, dtype=np.int64))
    test = np.unique(np.asarray(test, dtype=np.int64))
    for name, ids in (("train", train), ("val", val), ("test", test)):
        if ids.size and (ids.min() < 0 or ids.max() >= g.n):
            raise DataError(f"{name} ids outside [0, {g.n})")
    if np.intersect1d(train, val).size or np.intersect1d(train, test).size or np.intersect1d(val, test).size:
        raise DataError("explicit train/val/test ids overlap")
    if train.size == 0:
        raise ConfigError("explicit split has no training nodes", key="train")
    rest = np.setdiff1d(np.arange(g.n), np.concatenate([train, val, test]))
    test = np.concatenate([test, rest])
    if test.size == 0:
        raise ConfigError("explicit split has no test nodes", key="test")
    pool = test[rng.stream(seed, "split").permutation(test.size)]
    test_ind, test_obs = _draw_inductive(pool, val.size + test.size, setting, ind_ratio)
    return SplitSpec(setting, train, val, test_obs, test_ind, float(ind_ratio), seed, g.n)


def observed_subgraph(g: Graph, s: SplitSpec) -> tuple[Graph, np.ndarray]:
    """Training-time graph of the inductive setting.

    Drops the inductive test nodes and every edge touching them. Returns the
    re-indexed graph and ``index_map`` with ``index_map[new_id] == old_id``.
    """
    if s.setting != INDUCTIVE:
        raise ContractError("observed_subgraph requires an inductive split")
    if s.n != g.n:
        raise DataError(f"split covers {s.n} nodes but graph has {g.n}")
    index_map = s.observed
    new_id = np.full(g.n, -1, dtype=np.int64)
    new_id[index_map] = np.arange(index_map.size)
    u, v = g.edges[:, 0], g.edges[:, 1]
    keep = (new_id[u] >= 0) & (new_id[v] >= 0)
    edges = np.stack([new_id[u[keep]], new_id[v[keep]]], axis=1)
    sub = Graph(g.features[index_map], g.labels[index_map], edges, g.k, f"{g.name}[observed]")
    return sub, index_map


@dataclass(frozen=True)
class EdgeClassTally:
    """``intra[c]`` counts edges inside class c; ``inter`` is symmetric with
    ``inter[a, b] == inter[b, a]`` holding the edges between classes a != b."""

    intra: np.ndarray
    inter: np.ndarray

    @property
    def inter_total(self) -> int:
        return int(np.triu(self.inter, 1).sum())

    @property
    def total(self) -> int:
        return int(self.intra.sum()) + self.inter_total


def classify_edges(g: Graph) -> EdgeClassTally:
    lu = g.labels[g.edges[:, 0]]
    lv = g.labels[g.edges[:, 1]]
    same = lu == lv
    intra = np.bincount(lu[same], minlength=g.k).astype(np.int64)
    inter = np.zeros((g.k, g.k), dtype=np.int64)
    np.add.at(inter, (lu[~same], lv[~same]), 1)
    inter = inter + inter.T
    return EdgeClassTally(intra, inter)
