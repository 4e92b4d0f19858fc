"""Teacher training, prototype-guided distillation and grid search."""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import models as M
from . import rng
from .errors import ConfigError, DivergenceError
from .graph import INDUCTIVE, TRANSDUCTIVE, Graph, SplitSpec, observed_subgraph

PGKD = "pgkd"
GLNN = "glnn"
VANILLA = "vanilla"
METHODS = (PGKD, GLNN, VANILLA)

DEFAULT_GRID = [(l1, l2) for l1 in (0.1, 0.2, 0.4) for l2 in (0.05, 0.1)]


@dataclass
class TrainConfig:
    teacher: str = M.SAGE
    teacher_hidden: int = 128
    student_layers: int = 2
    student_hidden: int = 128
    lr_teacher: float = 0.01
    lr_student: float = 0.005
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    dropout: float = 0.5
    lambda1: float = 0.2
    lambda2: float = 0.1
    tau1: float = 1.0
    tau2: float = 10.0
    tau_kd: float = 1.0
    distance: str = "l2"
    inter_sign: float = 1.0
    mask_self_distance: bool = False
    prototype_layer: str = "hidden"
    prototype_scope: str = L.SCOPE_VISIBLE
    appnp_alpha: float = 0.1
    appnp_k: int = 10
    eval_every: int = 1
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.teacher not in M.TEACHERS:
            raise ConfigError(f"unknown teacher {self.teacher!r}", key="teacher")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative", key="lambda1")
        for key in ("tau1", "tau2", "tau_kd"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive", key=key)
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1", key="max_epochs")
        if self.patience < 0:
            raise ConfigError("patience must be non-negative", key="patience")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1", key="eval_every")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)", key="dropout")
        if self.student_layers < 2:
            raise ConfigError("student needs at least 2 layers", key="student_layers")
        if self.distance not in ("l2", "cosine"):
            raise ConfigError(f"unknown distance {self.distance!r}", key="distance")
        if self.prototype_layer not in ("hidden", "logits"):
            raise ConfigError(f"unknown prototype layer {self.prototype_layer!r}", key="prototype_layer")
        if self.prototype_scope not in (L.SCOPE_VISIBLE, L.SCOPE_TRAIN_VAL):
            raise ConfigError(f"unknown prototype scope {self.prototype_scope!r}", key="prototype_scope")
        return self

    def replace(self, **changes) -> "TrainConfig":
        known = {f.name for f in fields(self)}
        for key in changes:
            if key not in known:
                raise ConfigError(f"unknown training option {key!r}", key=key)
        return TrainConfig(**{**asdict(self), **changes})


@dataclass
class RunRecord:
    """Metrics of one training run. ``test_acc`` is read at the best-val epoch.

    Inductive runs report the inductive test nodes in ``test_acc`` (observed
    test nodes when there are none) and both subsets separately.
    """

    role: str
    method: str
    seed: int
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stop_epoch: int = -1
    best_val_acc: float = float("-inf")
    test_acc: float = float("nan")
    test_obs_acc: float | None = None
    test_ind_acc: float | None = None
    config: dict = field(default_factory=dict)
    wall_ms: float = 0.0
    status: str = "ok"

    def final(self) -> dict:
        return {
            "type": "final",
            "role": self.role,
            "method": self.method,
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
            "best_val_acc": self.best_val_acc,
            "test_acc": self.test_acc,
            "test_obs_acc": self.test_obs_acc,
            "test_ind_acc": self.test_ind_acc,
            "status": self.status,
            "config": self.config,
        }

    def records(self) -> list[dict]:
        """Per-epoch records followed by the final record. Wall time is excluded
        so that identical runs serialize identically."""
        return [dict(type="epoch", **e) for e in self.epochs] + [self.final()]


class Adam:
    """Adam with coupled L2 weight decay (decay added to the gradient)."""

    def __init__(self, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = {}
        for name, w in weights.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            m = self.b1 * self.m.get(name, 0.0) + (1.0 - self.b1) * g
            v = self.b2 * self.v.get(name, 0.0) + (1.0 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            out[name] = w - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _local(ids: np.ndarray, index_map: np.ndarray | None) -> np.ndarray:
    if index_map is None:
        return ids
    return np.searchsorted(index_map, ids)


class _EarlyStopper:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("-inf")
        self.best_epoch = -1
        self.bad = 0
        self.snapshot = None

    def update(self, epoch: int, val_acc: float, weights) -> bool:
        """Returns True when training should stop."""
        if val_acc > self.best:
            self.best = val_acc
            self.best_epoch = epoch
            self.bad = 0
            self.snapshot = {k: v.copy() for k, v in weights.items()}
            return False
        self.bad += 1
        return self.bad > self.patience


def _check_finite(value: float, record: RunRecord, epoch: int):
    if not np.isfinite(value):
        record.status = "diverged"
        record.stop_epoch = epoch
        raise DivergenceError(f"non-finite loss at epoch {epoch}", record)


def train_teacher(g: Graph, split: SplitSpec, cfg: TrainConfig) -> tuple[M.ModelParams, RunRecord]:
    """Full-batch cross-entropy training of the GNN teacher with early stopping on
    val accuracy. Inductive splits train on the observed subgraph and are
    evaluated on the full graph."""
    cfg.validate()
    start = time.perf_counter()
    if split.setting == INDUCTIVE:
        g_train, index_map = observed_subgraph(g, split)
    else:
        g_train, index_map = g, None
    train_rows = _local(split.train, index_map)
    val_rows = _local(split.val, index_map)
    if val_rows.size == 0:
        raise ConfigError("split has no validation nodes for early stopping", key="val_rate")
    y_train = g.labels[split.train]
    y_val = g.labels[split.val]
    options = {"alpha": cfg.appnp_alpha, "k_prop": cfg.appnp_k} if cfg.teacher == M.APPNP else {}
    params = M.init_params(cfg.teacher, [g.d, cfg.teacher_hidden, g.k], cfg.seed, sub=0, **options)
    operator = M.propagation_operator(cfg.teacher, g_train)
    opt = Adam(cfg.lr_teacher, cfg.weight_decay)
    drop_gen = rng.stream(cfg.seed, "dropout", 0)
    record = RunRecord("teacher", cfg.teacher, cfg.seed, config=asdict(cfg))
    stopper = _EarlyStopper(cfg.patience)
    features = g_train.features
    x_csr = M.sparse_features(features)
    for epoch in range(cfg.max_epochs):
        tape = ad.Tape()
        x = tape.const(features, sparse=x_csr)
        out, leaves = M.forward(params, tape, x, operator, p_drop=cfg.dropout, gen=drop_gen)
        loss = L.label_loss(out.logits, y_train, train_rows)
        _check_finite(loss.item(), record, epoch)
        grads = ad.backward(loss)
        params.weights = opt.step(params.weights, {k: grads[n] for k, n in leaves.items()})
        if (epoch + 1) % cfg.eval_every and epoch != cfg.max_epochs - 1:
            continue
        logits, _ = M.predict(params, features, operator=operator, features_csr=x_csr)
        train_acc = accuracy(logits[train_rows], y_train)
        val_acc = accuracy(logits[val_rows], y_val)
        record.epochs.append({"epoch": epoch, "loss": loss.item(), "train_acc": train_acc, "val_acc": val_acc})
        record.stop_epoch = epoch
        if stopper.update(epoch, val_acc, params.weights):
            break
    params.weights = stopper.snapshot
    record.best_epoch = stopper.best_epoch
    record.best_val_acc = stopper.best
    full_logits, _ = M.predict(params, g.features, g)
    _fill_test(record, split, full_logits, g.labels)
    record.wall_ms = (time.perf_counter() - start) * 1000.0
    return params, record


def _fill_test(record: RunRecord, split: SplitSpec, logits: np.ndarray, labels: np.ndarray, rows_of=None):
    def acc(ids):
        if ids.size == 0:
            return None
        rows = ids if rows_of is None else rows_of(ids)
        return accuracy(logits[rows], labels[ids])

    if split.setting == TRANSDUCTIVE:
        record.test_acc = acc(split.test_obs)
        record.test_obs_acc = record.test_acc
        return
    record.test_obs_acc = acc(split.test_obs)
    record.test_ind_acc = acc(split.test_ind)
    record.test_acc = record.test_ind_acc if record.test_ind_acc is not None else record.test_obs_acc


@dataclass(frozen=True)
class TeacherSignals:
    """Frozen teacher outputs on the training-visible nodes ``row_ids``."""

    logits: np.ndarray
    hidden: np.ndarray
    row_ids: np.ndarray

    def full_logits(self, n: int) -> np.ndarray:
        out = np.full((n, self.logits.shape[1]), np.nan)
        out[self.row_ids] = self.logits
        return out


def teacher_signals(g: Graph, split: SplitSpec, teacher: M.ModelParams) -> TeacherSignals:
    """Transductive: teacher on the full graph. Inductive: on the observed subgraph."""
    if split.setting == INDUCTIVE:
        sub, index_map = observed_subgraph(g, split)
        logits, hidden = M.predict(teacher, sub.features, sub)
        return TeacherSignals(logits, hidden, index_map)
    logits, hidden = M.predict(teacher, g.features, g)
    return TeacherSignals(logits, hidden, np.arange(g.n))


def _prototype_source(cfg: TrainConfig, logits, hidden):
    return logits if cfg.prototype_layer == "logits" else hidden


def distill_student(g: Graph, split: SplitSpec, teacher: M.ModelParams | None, cfg: TrainConfig,
                    signals: TeacherSignals | None = None, method: str = PGKD,
                    signal_override: np.ndarray | None = None) -> tuple[M.ModelParams, RunRecord]:
    """Train an MLP student on node features only.

    ``method`` selects the objective: ``pgkd`` (label + kd + lambda1 intra +
    lambda2 inter), ``glnn`` (label + kd, computed by its own code path) or
    ``vanilla`` (label only). Teacher outputs are computed once (or taken from
    ``signals``); edges of ``g`` are never read when ``signals`` is given.
    ``signal_override`` replaces the teacher logits (rows aligned with the
    signals' ``row_ids``).
    """
    cfg.validate()
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}", key="method")
    start = time.perf_counter()
    if signals is None and method != VANILLA:
        if teacher is None:
            raise ConfigError("distillation needs a teacher or cached teacher signals", key="teacher")
        signals = teacher_signals(g, split, teacher)
    row_ids = split.observed if split.setting == INDUCTIVE else np.arange(g.n)
    if signals is not None and not np.array_equal(signals.row_ids, row_ids):
        raise ConfigError("teacher signals do not cover the training-visible nodes", key="signals")
    t_logits = None
    if signals is not None:
        t_logits = signals.logits if signal_override is None else np.asarray(signal_override, dtype=np.float64)
    features = g.features[row_ids]
    x_csr = M.sparse_features(features)
    train_rows = _local(split.train, row_ids)
    val_rows = _local(split.val, row_ids)
    if val_rows.size == 0:
        raise ConfigError("split has no validation nodes for early stopping", key="val_rate")
    y_train = g.labels[split.train]
    y_val = g.labels[split.val]

    assign = protos_t = None
    if method == PGKD:
        full_t = np.full((g.n, t_logits.shape[1]), np.nan)
        full_t[row_ids] = t_logits
        assign = L.assign_labels(split.setting, split, full_t, y_train, cfg.prototype_scope)
        protos_t = L.teacher_prototypes(_prototype_source(cfg, t_logits, signals.hidden), assign, g.k, row_ids)

    dims = [g.d] + [cfg.student_hidden] * (cfg.student_layers - 1) + [g.k]
    params = M.init_params(M.MLP, dims, cfg.seed, sub=1)
    opt = Adam(cfg.lr_student, cfg.weight_decay)
    drop_gen = rng.stream(cfg.seed, "dropout", 1)
    record = RunRecord("student", method, cfg.seed, config=asdict(cfg))
    stopper = _EarlyStopper(cfg.patience)
    for epoch in range(cfg.max_epochs):
        tape = ad.Tape()
        out, leaves = M.forward(params, tape, tape.const(features, sparse=x_csr), p_drop=cfg.dropout, gen=drop_gen)
        if method == PGKD:
            loss, parts = pgkd_objective(out, t_logits, y_train, train_rows, assign, protos_t, row_ids, g.k, cfg)
        elif method == GLNN:
            loss, parts = glnn_objective(out, t_logits, y_train, train_rows, cfg)
        else:
            loss = L.label_loss(out.logits, y_train, train_rows)
            parts = {"label": loss.item(), "total": loss.item()}
        _check_finite(loss.item(), record, epoch)
        grads = ad.backward(loss)
        params.weights = opt.step(params.weights, {k: grads[n] for k, n in leaves.items()})
        if (epoch + 1) % cfg.eval_every and epoch != cfg.max_epochs - 1:
            continue
        logits, _ = M.predict(params, features, features_csr=x_csr)
        train_acc = accuracy(logits[train_rows], y_train)
        val_acc = accuracy(logits[val_rows], y_val)
        record.epochs.append({"epoch": epoch, **parts, "train_acc": train_acc, "val_acc": val_acc})
        record.stop_epoch = epoch
        if stopper.update(epoch, val_acc, params.weights):
            break
    params.weights = stopper.snapshot
    record.best_epoch = stopper.best_epoch
    record.best_val_acc = stopper.best
    test_ids = split.test
    logits, _ = M.predict(params, g.features[test_ids])
    _fill_test(record, split, logits, g.labels, rows_of=lambda ids: np.searchsorted(test_ids, ids))
    record.wall_ms = (time.perf_counter() - start) * 1000.0
    return params, record


def pgkd_objective(out: M.ForwardOutput, t_logits, y_train, train_rows, assign, protos_t, row_ids, k,
                   cfg: TrainConfig):
    parts = {
        "label": L.label_loss(out.logits, y_train, train_rows),
        "kd": L.kd_loss(out.logits, t_logits, cfg.tau_kd),
    }
    h = out.logits if cfg.prototype_layer == "logits" else out.hidden
    protos_s = L.compute_prototypes(h, assign, k, row_ids)
    parts["intra"] = L.intra_loss(h, assign, protos_s, cfg.tau1, cfg.distance, row_ids)
    parts["inter"] = L.inter_loss(protos_s, protos_t, cfg.tau2, cfg.distance, cfg.inter_sign,
                                  cfg.mask_self_distance)
    degenerate = L.usable_classes(protos_s, protos_t).size < 2
    loss, breakdown = L.total_loss(parts, cfg.lambda1, cfg.lambda2, tau1=cfg.tau1, tau2=cfg.tau2,
                                   tau_kd=cfg.tau_kd, inter_degenerate=bool(degenerate))
    return loss, breakdown.as_dict()


def glnn_objective(out: M.ForwardOutput, t_logits, y_train, train_rows, cfg: TrainConfig):
    """Baseline objective: label cross-entropy plus logit KD."""
    label = L.label_loss(out.logits, y_train, train_rows)
    kd = L.kd_loss(out.logits, t_logits, cfg.tau_kd)
    loss = ad.add(label, kd)
    return loss, {"label": label.item(), "kd": kd.item(), "total": loss.item()}


def evaluate(params: M.ModelParams, g: Graph, split: SplitSpec, nodes: str = "test") -> float:
    """Accuracy on one node set.

    Students see only the features of the evaluated nodes. Teachers run on
    the full graph (inductive edges preserved).
    """
    sets = {
        "train": split.train, "val": split.val, "test": split.test,
        "test_obs": split.test_obs, "test_ind": split.test_ind,
    }
    if nodes not in sets:
        raise ConfigError(f"unknown node set {nodes!r}", key="nodes")
    ids = sets[nodes]
    if params.kind == M.MLP:
        logits, _ = M.predict(params, g.features[ids])
        return accuracy(logits, g.labels[ids])
    logits, _ = M.predict(params, g.features, g)
    return accuracy(logits[ids], g.labels[ids])


# -- grid search -----------------------------------------------------------------

GRID_COLUMNS = ["lambda1", "lambda2", "seed", "val_acc", "test_acc", "epochs", "wall_ms"]


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    return mean, float(np.sqrt(((arr - mean) ** 2).mean()))


def run_grid(g: Graph, split: SplitSpec, grid, seeds, cfg: TrainConfig, jobs: int = 1,
             teachers: dict | None = None) -> list[dict]:
    """One distillation per (lambda1, lambda2, seed); the teacher is trained once per seed.

    A grid point with both weights zero runs the GLNN path.
    """
    teachers = dict(teachers or {})

    def teacher_for(seed):
        tcfg = cfg.replace(seed=seed)
        params, rec = train_teacher(g, split, tcfg)
        return seed, teacher_signals(g, split, params), rec

    missing = [s for s in seeds if s not in teachers]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for seed, sig, rec in pool.map(teacher_for, missing):
            teachers[seed] = sig

    cells = list(itertools.product(grid, seeds))

    def run(cell):
        (l1, l2), seed = cell
        ccfg = cfg.replace(lambda1=l1, lambda2=l2, seed=seed)
        method = GLNN if l1 == 0 and l2 == 0 else PGKD
        _, rec = distill_student(g, split, None, ccfg, signals=teachers[seed], method=method)
        return {
            "lambda1": float(l1), "lambda2": float(l2), "seed": int(seed),
            "val_acc": rec.best_val_acc, "test_acc": rec.test_acc,
            "epochs": rec.stop_epoch + 1, "wall_ms": round(rec.wall_ms, 3),
        }

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(run, cells))


def summarize_grid(rows: list[dict]) -> list[dict]:
    """Per grid point mean/std of val and test accuracy; ``best`` marks the highest mean val."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["lambda1"], r["lambda2"]), []).append(r)
    out = []
    for (l1, l2), rs in groups.items():
        vm, vs = mean_std([r["val_acc"] for r in rs])
        tm, ts = mean_std([r["test_acc"] for r in rs])
        out.append({"lambda1": l1, "lambda2": l2, "n_seeds": len(rs),
                    "val_mean": vm, "val_std": vs, "test_mean": tm, "test_std": ts, "best": 0})
    if out:
        best = max(range(len(out)), key=lambda i: (out[i]["val_mean"], -i))
        out[best]["best"] = 1
    return out


def grid_search(g: Graph, split: SplitSpec, grid, seeds, cfg: TrainConfig, jobs: int = 1):
    """Returns ``(per-run rows, summary rows, best summary row)``."""
    rows = run_grid(g, split, grid, seeds, cfg, jobs)
    summary = summarize_grid(rows)
    best = next(r for r in summary if r["best"])
    return rows, summary, best
