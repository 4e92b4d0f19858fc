"""Class prototypes and the four terms of the distillation objective.

    total = label + kd + lambda1 * intra + lambda2 * inter

* ``label``: cross-entropy on the training nodes.
* ``kd``: tau_kd^2 * KL(softmax(z_t / tau_kd) || softmax(z_s / tau_kd)), node mean.
* ``intra``: cross-entropy of ``softmax(-d(h_i, P^s_c) / tau1)`` against node i's
  assigned class, averaged over the prototype scope.
* ``inter``: for each class i, KL between softmaxed distance rows
  ``softmax(sign * d(P_i, P_j) / tau2)`` of teacher (target) and student,
  averaged over classes.

Student representations arrive as tape nodes whose rows are indexed by
``row_ids`` (sorted node ids). Teacher quantities are plain arrays and never
receive gradients. Empty classes are dropped from every softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, ParameterError
from .graph import INDUCTIVE, TRANSDUCTIVE, SplitSpec

NOT_IN_SCOPE = 0
GROUND_TRUTH_TRAIN = 1
TEACHER_PREDICTED = 2

SCOPE_VISIBLE = "visible"
SCOPE_TRAIN_VAL = "train_val"


@dataclass(frozen=True)
class LabelAssignment:
    """Per-node labels used to group nodes into prototypes.

    ``labels[v]`` is -1 and ``provenance[v]`` is NOT_IN_SCOPE outside ``scope``.
    """

    labels: np.ndarray
    provenance: np.ndarray
    scope: np.ndarray


@dataclass
class PrototypeSet:
    """``prototypes`` is a tape node (student) or a constant node (teacher)."""

    prototypes: ad.Node
    counts: np.ndarray
    empty_mask: np.ndarray
    source: str

    @property
    def values(self) -> np.ndarray:
        return self.prototypes.value


@dataclass
class LossBreakdown:
    label: float
    kd: float
    intra: float
    inter: float
    total: float
    lambda1: float
    lambda2: float
    tau1: float
    tau2: float
    tau_kd: float
    inter_degenerate: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def assign_labels(setting: str, split: SplitSpec, teacher_logits, y_train,
                  scope: str = SCOPE_VISIBLE) -> LabelAssignment:
    """Labels for prototype grouping.

    Transductive: ground truth on train nodes, teacher argmax (ties to the
    lowest class id) on every other node in scope; ``teacher_logits`` is an
    ``N x K`` array (rows outside the scope are ignored). Inductive: ground
    truth on train nodes only, and the scope is the train set. ``y_train`` is
    aligned with ``split.train``; labels of other nodes are never read.
    """
    n = split.n
    y_train = np.asarray(y_train, dtype=np.int64).reshape(-1)
    if y_train.size != split.train.size:
        raise ContractError(f"{y_train.size} train labels for {split.train.size} train nodes")
    labels = np.full(n, -1, dtype=np.int64)
    prov = np.full(n, NOT_IN_SCOPE, dtype=np.int8)
    if setting == INDUCTIVE:
        labels[split.train] = y_train
        prov[split.train] = GROUND_TRUTH_TRAIN
        return LabelAssignment(labels, prov, split.train.copy())
    if setting != TRANSDUCTIVE:
        raise ConfigError(f"unknown setting {setting!r}", key="setting")
    if teacher_logits is None:
        raise ContractError("transductive label assignment needs teacher logits")
    if scope == SCOPE_VISIBLE:
        ids = split.observed
    elif scope == SCOPE_TRAIN_VAL:
        ids = np.sort(np.concatenate([split.train, split.val]))
    else:
        raise ConfigError(f"unknown prototype scope {scope!r}", key="prototype_scope")
    logits = np.asarray(teacher_logits)
    labels[ids] = np.argmax(logits[ids], axis=1)
    prov[ids] = TEACHER_PREDICTED
    labels[split.train] = y_train
    prov[split.train] = GROUND_TRUTH_TRAIN
    return LabelAssignment(labels, prov, ids)


def _positions(row_ids, ids) -> np.ndarray:
    if row_ids is None:
        return np.asarray(ids, dtype=np.int64)
    row_ids = np.asarray(row_ids)
    pos = np.searchsorted(row_ids, ids)
    if pos.size and (pos.max() >= row_ids.size or not np.array_equal(row_ids[pos], ids)):
        raise ContractError("scope contains nodes without a representation row")
    return pos


def compute_prototypes(h: ad.Node, assign: LabelAssignment, k: int, row_ids=None,
                       source: str = "student") -> PrototypeSet:
    """Mean representation per assigned class over the assignment scope."""
    if assign.scope.size == 0:
        raise ConfigError("prototype scope is empty", key="prototype_scope")
    rows = ad.gather_rows(h, _positions(row_ids, assign.scope))
    protos, empty = ad.mean_rows_by_group(rows, assign.labels[assign.scope], k)
    if empty.all():
        raise ConfigError("every class is empty in the prototype scope", key="prototype_scope")
    counts = np.bincount(assign.labels[assign.scope], minlength=k)
    return PrototypeSet(protos, counts, empty, source)


def teacher_prototypes(hidden: np.ndarray, assign: LabelAssignment, k: int, row_ids=None) -> PrototypeSet:
    """Frozen teacher prototypes on their own constant tape."""
    tape = ad.Tape()
    return compute_prototypes(tape.const(hidden), assign, k, row_ids, source="teacher")


def intra_loss(h: ad.Node, assign: LabelAssignment, protos: PrototypeSet, tau1: float = 1.0,
               metric: str = "l2", row_ids=None) -> ad.Node:
    """Mean over scoped nodes of -log softmax(-mu_i / tau1)[c_i], mu_i the distances to all
    non-empty student prototypes."""
    if not tau1 > 0:
        raise ParameterError(f"tau1 must be positive, got {tau1}")
    nonempty = ~protos.empty_mask
    ids = assign.scope[nonempty[assign.labels[assign.scope]]]
    tape = h.tape
    if ids.size == 0:
        return tape.const(np.zeros((1, 1)))
    rows = ad.gather_rows(h, _positions(row_ids, ids))
    mu = ad.pairwise_distance(rows, protos.prototypes, metric)
    logp = ad.log_softmax_rows(ad.scale(mu, -1.0), tau1, mask=nonempty[None, :])
    onehot = np.zeros(mu.shape)
    onehot[np.arange(ids.size), assign.labels[ids]] = 1.0
    return ad.scale(ad.sum_all(ad.mul(logp, tape.const(onehot))), -1.0 / ids.size)


def usable_classes(protos_s: PrototypeSet, protos_t: PrototypeSet) -> np.ndarray:
    return np.flatnonzero(~protos_s.empty_mask & ~protos_t.empty_mask)


def inter_loss(protos_s: PrototypeSet, protos_t: PrototypeSet, tau2: float = 10.0, metric: str = "l2",
               sign: float = 1.0, mask_self: bool = False) -> ad.Node:
    """Mean over usable classes i of KL(p_t,i || p_s,i), p = softmax(sign * sigma_i / tau2).

    With fewer than two classes non-empty in both sets the loss is the
    constant 0 (check :func:`usable_classes` to flag it).
    """
    if not tau2 > 0:
        raise ParameterError(f"tau2 must be positive, got {tau2}")
    tape = protos_s.prototypes.tape
    use = usable_classes(protos_s, protos_t)
    if use.size < 2:
        return tape.const(np.zeros((1, 1)))
    ps = ad.gather_rows(protos_s.prototypes, use)
    pt = protos_t.values[use]
    sigma_s = ad.pairwise_distance(ps, ps, metric)
    ttape = ad.Tape()
    sigma_t = ad.pairwise_distance(ttape.const(pt), ttape.const(pt), metric).value
    mask = ~np.eye(use.size, dtype=bool) if mask_self else None
    logp_s = ad.log_softmax_rows(ad.scale(sigma_s, sign), tau2, mask=mask)
    logp_t = ad.log_softmax_rows(ttape.const(sign * sigma_t), tau2, mask=mask).value
    p_t = np.exp(logp_t) if mask is None else np.where(mask, np.exp(logp_t), 0.0)
    entropy_term = float((p_t * logp_t).sum())
    cross = ad.sum_all(ad.mul(logp_s, tape.const(p_t)))
    return ad.scale(ad.add(tape.const(entropy_term), ad.scale(cross, -1.0)), 1.0 / use.size)


def kd_loss(student_logits: ad.Node, teacher_logits: np.ndarray, tau_kd: float = 1.0,
            rows=None) -> ad.Node:
    """tau_kd^2 * mean over ``rows`` of KL(softmax(z_t/tau) || softmax(z_s/tau)).

    ``teacher_logits`` is aligned row-for-row with ``student_logits``.
    """
    if not tau_kd > 0:
        raise ParameterError(f"tau_kd must be positive, got {tau_kd}")
    tape = student_logits.tape
    zt = np.asarray(teacher_logits, dtype=np.float64)
    zs = student_logits
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64)
        zs = ad.gather_rows(zs, rows)
        zt = zt[rows]
    n = zs.shape[0]
    logp_t = ad.log_softmax_rows(tape.const(zt), tau_kd).value
    p_t = np.exp(logp_t)
    logp_s = ad.log_softmax_rows(zs, tau_kd)
    entropy_term = float((p_t * logp_t).sum())
    cross = ad.sum_all(ad.mul(logp_s, tape.const(p_t)))
    return ad.scale(ad.add(tape.const(entropy_term), ad.scale(cross, -1.0)), tau_kd * tau_kd / n)


def label_loss(student_logits: ad.Node, y_train, train_rows) -> ad.Node:
    """Mean cross-entropy over the rows ``train_rows`` with targets ``y_train``."""
    tape = student_logits.tape
    rows = np.asarray(train_rows, dtype=np.int64)
    y = np.asarray(y_train, dtype=np.int64).reshape(-1)
    if rows.size != y.size:
        raise ContractError(f"{y.size} targets for {rows.size} rows")
    if rows.size == 0:
        raise ConfigError("no training nodes for the label loss", key="train")
    logp = ad.log_softmax_rows(ad.gather_rows(student_logits, rows))
    onehot = np.zeros(logp.shape)
    onehot[np.arange(rows.size), y] = 1.0
    return ad.scale(ad.sum_all(ad.mul(logp, tape.const(onehot))), -1.0 / rows.size)


def total_loss(parts: dict, lambda1: float, lambda2: float, *, tau1: float = 1.0, tau2: float = 10.0,
               tau_kd: float = 1.0, inter_degenerate: bool = False) -> tuple[ad.Node, LossBreakdown]:
    """Weighted sum ``label + kd + lambda1 * intra + lambda2 * inter``.

    ``parts`` maps "label", "kd" and optionally "intra", "inter" to scalar
    nodes; missing terms count as 0 (the GLNN objective).
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ParameterError("loss weights must be non-negative")
    total = ad.add(parts["label"], parts["kd"])
    values = {}
    for key, lam in (("intra", lambda1), ("inter", lambda2)):
        node = parts.get(key)
        if node is None:
            values[key] = 0.0
            continue
        values[key] = node.item()
        total = ad.add(total, ad.scale(node, lam))
    breakdown = LossBreakdown(
        label=parts["label"].item(), kd=parts["kd"].item(), intra=values["intra"], inter=values["inter"],
        total=total.item(), lambda1=float(lambda1), lambda2=float(lambda2),
        tau1=float(tau1), tau2=float(tau2), tau_kd=float(tau_kd), inter_degenerate=inter_degenerate,
    )
    return total, breakdown
