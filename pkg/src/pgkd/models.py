"""GNN teachers (GCN, GraphSAGE-mean, APPNP) and the MLP student.

All forwards run on an autodiff tape and return a :class:`ForwardOutput`
whose ``hidden`` node is the activation feeding the final linear layer
(before dropout). Parameters live in :class:`ModelParams` as plain arrays;
:func:`bind` turns them into trainable leaves of a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import rng
from .errors import ConfigError, DimensionError
from .graph import Graph, neighbor_mean_operator, normalize_adjacency

MLP = "mlp"
GCN = "gcn"
SAGE = "sage"
APPNP = "appnp"
KINDS = (MLP, GCN, SAGE, APPNP)
TEACHERS = (GCN, SAGE, APPNP)


@dataclass
class ModelParams:
    """Named weights in layer order. ``dims`` is ``[in, hidden..., out]``."""

    kind: str
    dims: list[int]
    weights: dict[str, np.ndarray]
    options: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def param_count(self) -> int:
        return int(sum(w.size for w in self.weights.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, list(self.dims),
                           {k: v.copy() for k, v in self.weights.items()}, dict(self.options))


@dataclass
class ForwardOutput:
    logits: ad.Node
    hidden: ad.Node


def _layer_names(kind: str, dims: list[int]):
    names = []
    for l in range(len(dims) - 1):
        fan_in, fan_out = dims[l], dims[l + 1]
        if kind == SAGE:
            names.append((f"W_self{l}", (fan_in, fan_out), fan_in * 2))
            names.append((f"W_neigh{l}", (fan_in, fan_out), fan_in * 2))
        else:
            names.append((f"W{l}", (fan_in, fan_out), fan_in))
        names.append((f"b{l}", (1, fan_out), None))
    return names


def expected_shapes(kind: str, dims) -> dict[str, tuple[int, int]]:
    return {name: shape for name, shape, _ in _layer_names(kind, list(dims))}


def init_params(kind: str, dims, seed: int, sub: int = 0, **options) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from the ``init`` stream, biases zero.

    GCN and SAGE teachers must have exactly two layers; MLPs (and the MLP
    inside APPNP) need at least two.
    """
    dims = [int(d) for d in dims]
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}", key="kind")
    if len(dims) < 3:
        raise ConfigError(f"{kind} needs at least 2 layers, got dims {dims}", key="layers")
    if kind in (GCN, SAGE) and len(dims) != 3:
        raise ConfigError(f"{kind} teacher is two-layer, got dims {dims}", key="layers")
    if kind == APPNP:
        options.setdefault("alpha", 0.1)
        options.setdefault("k_prop", 10)
    gen = rng.stream(seed, "init", sub)
    weights = {}
    for name, shape, fan_in in _layer_names(kind, dims):
        if fan_in is None:
            weights[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            weights[name] = gen.uniform(-bound, bound, size=shape)
    return ModelParams(kind, dims, weights, options)


def param_count(kind: str, dims) -> int:
    """Sum over layers of ``(in + 1) * out`` (SAGE layers see ``2 * in`` inputs)."""
    total = 0
    for l in range(len(dims) - 1):
        fan_in = dims[l] * (2 if kind == SAGE else 1)
        total += (fan_in + 1) * dims[l + 1]
    return total


def bind(tape: ad.Tape, params: ModelParams, trainable: bool = True) -> dict[str, ad.Node]:
    return {name: tape.leaf(w, name=name, trainable=trainable) for name, w in params.weights.items()}


def dropout(x: ad.Node, p: float, gen: np.random.Generator | None) -> ad.Node:
    """Inverted dropout; the identity (same node) when ``gen`` is None or ``p == 0``."""
    if gen is None or p <= 0.0:
        return x
    keep = gen.random(x.shape) >= p
    mask = np.where(keep, 1.0 / (1.0 - p), 0.0)
    return ad.mul(x, x.tape.const(mask))


def _linear(x: ad.Node, leaves, l: int) -> ad.Node:
    return ad.add(ad.matmul(x, leaves[f"W{l}"]), leaves[f"b{l}"])


def mlp_forward(x: ad.Node, leaves: dict, p_drop: float = 0.0, gen=None) -> ForwardOutput:
    """Linear -> ReLU -> Dropout blocks followed by a final linear layer. Reads no edges."""
    n_layers = sum(1 for k in leaves if k.startswith("W"))
    if n_layers < 2:
        raise ConfigError("MLP needs at least 2 layers", key="layers")
    h = x
    hidden = x
    for l in range(n_layers - 1):
        hidden = ad.relu(_linear(h, leaves, l))
        h = dropout(hidden, p_drop, gen)
    return ForwardOutput(_linear(h, leaves, n_layers - 1), hidden)


def gcn_forward(a_hat: sp.spmatrix, x: ad.Node, leaves: dict, p_drop: float = 0.0, gen=None) -> ForwardOutput:
    """hidden = ReLU(A_hat X W0 + b0); logits = A_hat dropout(hidden) W1 + b1."""
    if a_hat.shape[0] != x.shape[0]:
        raise DimensionError(f"adjacency {a_hat.shape} does not match features {x.shape}")
    hidden = ad.relu(ad.add(ad.sparse_matmul(a_hat, ad.matmul(x, leaves["W0"])), leaves["b0"]))
    h = dropout(hidden, p_drop, gen)
    logits = ad.add(ad.sparse_matmul(a_hat, ad.matmul(h, leaves["W1"])), leaves["b1"])
    return ForwardOutput(logits, hidden)


def _sage_layer(mean_op, h, leaves, l):
    own = ad.matmul(h, leaves[f"W_self{l}"])
    neigh = ad.sparse_matmul(mean_op, ad.matmul(h, leaves[f"W_neigh{l}"]))
    return ad.add(ad.add(own, neigh), leaves[f"b{l}"])


def sage_forward(mean_op: sp.spmatrix, x: ad.Node, leaves: dict, p_drop: float = 0.0, gen=None) -> ForwardOutput:
    """GraphSAGE with mean aggregation and concat update.

    ``concat(h_v, mean_N(v) h_u) @ [W_self; W_neigh]`` is computed as
    ``h_v W_self + mean(h_u W_neigh)``, which is the same linear map.
    """
    if mean_op.shape[0] != x.shape[0]:
        raise DimensionError(f"neighbour operator {mean_op.shape} does not match features {x.shape}")
    hidden = ad.relu(_sage_layer(mean_op, x, leaves, 0))
    h = dropout(hidden, p_drop, gen)
    return ForwardOutput(_sage_layer(mean_op, h, leaves, 1), hidden)


def appnp_forward(a_hat: sp.spmatrix, x: ad.Node, leaves: dict, alpha: float = 0.1, k_prop: int = 10,
                  p_drop: float = 0.0, gen=None) -> ForwardOutput:
    """H0 = MLP(X); Z <- (1 - alpha) A_hat Z + alpha H0, repeated ``k_prop`` times.

    ``hidden`` is the hidden layer of the MLP part.
    """
    if a_hat.shape[0] != x.shape[0]:
        raise DimensionError(f"adjacency {a_hat.shape} does not match features {x.shape}")
    base = mlp_forward(x, leaves, p_drop, gen)
    h0 = base.logits
    z = h0
    teleport = ad.scale(h0, alpha)
    for _ in range(int(k_prop)):
        z = ad.add(ad.scale(ad.sparse_matmul(a_hat, z), 1.0 - alpha), teleport)
    return ForwardOutput(z, base.hidden)


def propagation_operator(kind: str, g: Graph):
    """The sparse operator a teacher multiplies by; None for the MLP."""
    if kind in (GCN, APPNP):
        return normalize_adjacency(g)
    if kind == SAGE:
        return neighbor_mean_operator(g)
    return None


def forward(params: ModelParams, tape: ad.Tape, x: ad.Node, operator=None, *,
            leaves: dict | None = None, p_drop: float = 0.0, gen=None) -> tuple[ForwardOutput, dict]:
    """Dispatch on ``params.kind``. Returns the output and the bound leaves."""
    if x.shape[1] != params.dims[0]:
        raise DimensionError(f"features have {x.shape[1]} columns, model expects {params.dims[0]}")
    if leaves is None:
        leaves = bind(tape, params)
    kind = params.kind
    if kind == MLP:
        out = mlp_forward(x, leaves, p_drop, gen)
    elif kind == GCN:
        out = gcn_forward(operator, x, leaves, p_drop, gen)
    elif kind == SAGE:
        out = sage_forward(operator, x, leaves, p_drop, gen)
    elif kind == APPNP:
        out = appnp_forward(operator, x, leaves, params.options.get("alpha", 0.1),
                            params.options.get("k_prop", 10), p_drop, gen)
    else:
        raise ConfigError(f"unknown model kind {kind!r}", key="kind")
    return out, leaves


def sparse_features(features: np.ndarray, max_density: float = 0.1) -> sp.csr_matrix | None:
    """CSR copy of mostly-zero feature matrices (bag-of-words style), else None."""
    if features.size == 0 or np.count_nonzero(features) > max_density * features.size:
        return None
    return sp.csr_matrix(features)


def predict(params: ModelParams, features: np.ndarray, g: Graph | None = None, operator=None,
            features_csr: sp.spmatrix | None = None):
    """Eval-mode forward returning ``(logits, hidden)`` arrays.

    Teachers need ``g`` (or a precomputed ``operator``); the MLP ignores both.
    """
    if params.kind != MLP and operator is None:
        if g is None:
            raise ConfigError(f"{params.kind} teacher needs a graph", key="graph")
        operator = propagation_operator(params.kind, g)
    tape = ad.Tape()
    x = tape.const(features, sparse=features_csr)
    out, _ = forward(params, tape, x, operator if params.kind != MLP else None)
    return out.logits.value, out.hidden.value
