"""Dense-matrix reverse-mode automatic differentiation.

A :class:`Tape` records every operation of one forward pass. Values are 2-D
``float64`` numpy arrays; scalars are ``1x1``. The set of operations is closed
and small: every op below has a hand-written vector-Jacobian product, and
:func:`backward` walks the tape once in reverse.

    tape = Tape()
    w = tape.leaf(np.ones((2, 2)), name="w")
    loss = sum_all(relu(w))
    grads = backward(loss)
    grads[w]            # array of ones

Nodes built only from constants do not require gradients and are skipped
during the backward sweep.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DataError, DimensionError, ParameterError

LEAF = "leaf"
MATMUL = "matmul"
ADD = "add"
SCALE = "scale"
RELU = "relu"
LOG_SOFTMAX_ROWS = "log-softmax-rows"
GATHER_ROWS = "gather-rows"
MEAN_ROWS_BY_GROUP = "mean-rows-by-group"
MUL = "elementwise-mul"
SUM = "sum"
TRANSPOSE = "transpose"
SPARSE_MATMUL = "sparse-matmul"
PAIRWISE_DISTANCE = "pairwise-distance"

OP_KINDS = (
    LEAF, MATMUL, ADD, SCALE, RELU, LOG_SOFTMAX_ROWS, GATHER_ROWS,
    MEAN_ROWS_BY_GROUP, MUL, SUM, TRANSPOSE, SPARSE_MATMUL, PAIRWISE_DISTANCE,
)


def as_matrix(value, copy: bool = False) -> np.ndarray:
    """Coerce ``value`` to a C-contiguous 2-D float64 array."""
    arr = np.array(value, dtype=np.float64, copy=True) if copy else np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Node:
    __slots__ = ("tape", "index", "value", "op", "parents", "vjp", "trainable",
                 "requires_grad", "name", "sparse", "__weakref__")

    def __init__(self, tape, value, op, parents=(), vjp=None, trainable=False, name=None):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.vjp = vjp
        self.trainable = trainable
        self.requires_grad = trainable or any(p.requires_grad for p in self.parents)
        self.name = name
        self.sparse = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.index} {self.op}{label} {self.value.shape}>"


class Tape:
    """Append-only record of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, name: str | None = None, trainable: bool = True) -> Node:
        return Node(self, as_matrix(value, copy=trainable), LEAF, trainable=trainable, name=name)

    def const(self, value, name: str | None = None, sparse: sp.spmatrix | None = None) -> Node:
        """Non-trainable leaf. ``sparse``, if given, is a CSR copy of ``value``
        that matmul uses when this node is the left operand."""
        node = self.leaf(value, name=name, trainable=False)
        if sparse is not None:
            if sparse.shape != node.shape:
                raise DimensionError(f"sparse copy {sparse.shape} does not match value {node.shape}")
            node.sparse = sp.csr_matrix(sparse)
        return node

    def __len__(self):
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)


class Gradients(dict):
    """Map from trainable leaf to its gradient; accepts the node or its index."""

    def __getitem__(self, key):
        if isinstance(key, Node):
            key = key.index
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Node):
            key = key.index
        return super().__contains__(key)


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ContractError("operands belong to different tapes")
    return tape


def _record(parents, value, op, vjp: Callable) -> Node:
    tape = _same_tape(*parents)
    return Node(tape, value, op, parents, vjp)


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    sa = a.sparse

    def vjp(g):
        ga = g @ bv.T if a.requires_grad else None
        if not b.requires_grad:
            return ga, None
        return ga, (sa.T @ g if sa is not None else av.T @ g)

    value = np.asarray(sa @ bv) if sa is not None else av @ bv
    return _record((a, b), value, MATMUL, vjp)


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; ``b`` may also be a single row broadcast over ``a``."""
    if a.shape == b.shape:
        def vjp(g):
            return g, g
    elif b.shape == (1, a.shape[1]):
        def vjp(g):
            return g, g.sum(axis=0, keepdims=True)
    else:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _record((a, b), a.value + b.value, ADD, vjp)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _record((a,), a.value * c, SCALE, vjp)


def relu(a: Node) -> Node:
    mask = a.value > 0

    def vjp(g):
        return (g * mask,)

    return _record((a,), np.where(mask, a.value, 0.0), RELU, vjp)


def log_softmax_rows(a: Node, temperature: float = 1.0, mask=None) -> Node:
    """Row-wise log-softmax of ``a / temperature``.

    ``mask`` (boolean, broadcastable to ``a``) keeps only the True columns in
    each row's normalizer; masked-out entries are returned as 0 and receive
    no gradient.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    z = a.value / temperature
    if mask is None:
        keep = np.ones(z.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not keep.any(axis=1).all():
            raise ContractError("log_softmax_rows mask leaves a row empty")
    zm = np.where(keep, z, -np.inf)
    row_max = zm.max(axis=1, keepdims=True)
    shifted = np.where(keep, z - row_max, -np.inf)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = np.where(keep, shifted - lse, 0.0)
    probs = np.where(keep, np.exp(out), 0.0)

    def vjp(g):
        g = np.where(keep, g, 0.0)
        return ((g - probs * g.sum(axis=1, keepdims=True)) / temperature,)

    return _record((a,), out, LOG_SOFTMAX_ROWS, vjp)


def softmax_rows(values: np.ndarray, temperature: float = 1.0, mask=None) -> np.ndarray:
    """Plain-array softmax using the same stabilised path as the tape op."""
    logp = log_softmax_rows(Tape().const(values), temperature, mask).value
    if mask is None:
        return np.exp(logp)
    return np.where(np.broadcast_to(np.asarray(mask, dtype=bool), logp.shape), np.exp(logp), 0.0)


def gather_rows(a: Node, index) -> Node:
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    n = a.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DataError(f"gather_rows index out of range for {n} rows")

    def vjp(g):
        out = np.zeros(a.value.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record((a,), a.value[idx], GATHER_ROWS, vjp)


def mean_rows_by_group(h: Node, group, k: int) -> tuple[Node, np.ndarray]:
    """Per-group row means of ``h``.

    Returns the ``k x d`` node of means and a boolean emptiness mask. Rows of
    empty groups are zero.
    """
    grp = np.asarray(group, dtype=np.int64).reshape(-1)
    if grp.size != h.shape[0]:
        raise DimensionError(f"group has {grp.size} ids for {h.shape[0]} rows")
    if grp.size and (grp.min() < 0 or grp.max() >= k):
        raise DataError(f"group id out of range [0, {k})")
    counts = np.bincount(grp, minlength=k).astype(np.float64)
    empty = counts == 0
    sums = np.zeros((k, h.shape[1]))
    np.add.at(sums, grp, h.value)
    denom = np.where(empty, 1.0, counts)[:, None]
    means = sums / denom

    def vjp(g):
        return ((g / denom)[grp],)

    node = _record((h,), means, MEAN_ROWS_BY_GROUP, vjp)
    return node, empty


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    av, bv = a.value, b.value

    def vjp(g):
        return g * bv, g * av

    return _record((a, b), av * bv, MUL, vjp)


def sum_all(a: Node) -> Node:
    shape = a.shape

    def vjp(g):
        return (np.full(shape, g[0, 0]),)

    return _record((a,), np.array([[a.value.sum()]]), SUM, vjp)


def transpose(a: Node) -> Node:
    def vjp(g):
        return (g.T,)

    return _record((a,), np.ascontiguousarray(a.value.T), TRANSPOSE, vjp)


def sparse_matmul(s: sp.spmatrix, a: Node) -> Node:
    """Constant sparse matrix times node."""
    s = sp.csr_matrix(s)
    if s.shape[1] != a.shape[0]:
        raise DimensionError(f"sparse_matmul shape mismatch: {s.shape} x {a.shape}")
    st = s.T.tocsr()

    def vjp(g):
        return (np.asarray(st @ g),)

    return _record((a,), np.asarray(s @ a.value), SPARSE_MATMUL, vjp)


def pairwise_distance(a: Node, b: Node, metric: str = "l2") -> Node:
    """``out[i, j] = d(a_i, b_j)`` for ``metric`` in {"l2", "cosine"}.

    Zero-distance pairs under L2 (and zero-norm rows under cosine) get a zero
    subgradient.
    """
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"pairwise_distance dim mismatch: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    if metric == "l2":
        diff = av[:, None, :] - bv[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        safe = dist > 0
        inv = np.where(safe, 1.0 / np.where(safe, dist, 1.0), 0.0)

        def vjp(g):
            w = g * inv
            ga = w.sum(axis=1)[:, None] * av - w @ bv
            gb = w.sum(axis=0)[:, None] * bv - w.T @ av
            return ga, gb

        return _record((a, b), dist, PAIRWISE_DISTANCE, vjp)
    if metric == "cosine":
        na = np.sqrt(np.einsum("ij,ij->i", av, av))
        nb = np.sqrt(np.einsum("ij,ij->i", bv, bv))
        ia = np.where(na > 0, 1.0 / np.where(na > 0, na, 1.0), 0.0)
        ib = np.where(nb > 0, 1.0 / np.where(nb > 0, nb, 1.0), 0.0)
        u = av * ia[:, None]
        v = bv * ib[:, None]
        cos = u @ v.T

        def vjp(g):
            # d(1 - cos)/da_i = -(v_j - cos_ij u_i) / |a_i|
            ga = -(g @ v - (g * cos).sum(axis=1)[:, None] * u) * ia[:, None]
            gb = -(g.T @ u - (g * cos).sum(axis=0)[:, None] * v) * ib[:, None]
            return ga, gb

        return _record((a, b), 1.0 - cos, PAIRWISE_DISTANCE, vjp)
    raise ParameterError(f"unknown distance metric {metric!r}")


def backward(loss: Node) -> Gradients:
    """Gradients of the scalar ``loss`` with respect to every trainable leaf
    that the forward pass touched."""
    if loss.value.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.value.shape}")
    tape = loss.tape
    adj: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
    grads = Gradients()
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = adj.pop(node.index, None)
        if g is None or not node.requires_grad:
            continue
        if node.op == LEAF:
            if node.trainable:
                grads[node.index] = g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            if parent.index in adj:
                adj[parent.index] = adj[parent.index] + pg
            else:
                adj[parent.index] = pg
    for node in tape.nodes[: loss.index + 1]:
        if node.trainable and node.index not in grads:
            grads[node.index] = np.zeros(node.value.shape)
    return grads
