import math

import numpy as np
import pytest

import oracles
from pgkd import models as M
from pgkd.data import SbmConfig, generate_sbm
from pgkd.errors import ConfigError, DivergenceError
from pgkd.graph import INDUCTIVE, make_split
from pgkd.training import (GLNN, PGKD, VANILLA, Adam, TrainConfig, accuracy, distill_student, evaluate,
                           grid_search, mean_std, run_grid, summarize_grid, teacher_signals, train_teacher)


@pytest.fixture(scope="module")
def separable():
    g = generate_sbm(SbmConfig(k=2, nodes_per_block=60, p_intra=0.1, p_inter=0.005, feature_dim=6,
                               feature_center_separation=4.0, feature_noise_std=1.0, seed=0))
    return g, make_split(g, train_per_class=10, seed=0)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(tau1=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lambda2=-1).validate()
    with pytest.raises(ConfigError):
        TrainConfig(max_epochs=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig().replace(lamda1=0.1)


def test_adam_first_step_is_lr_sign():
    opt = Adam(0.1)
    w = {"w": np.array([[1.0, -1.0]])}
    out = opt.step(w, {"w": np.array([[2.0, -3.0]])})
    assert np.allclose(out["w"], [[0.9, -0.9]])


def test_adam_coupled_weight_decay():
    opt = Adam(0.1, weight_decay=0.5)
    out = opt.step({"w": np.array([[2.0]])}, {"w": np.array([[0.0]])})
    assert np.allclose(out["w"], [[1.9]])


def test_teacher_separable_sbm(separable):
    g, s = separable
    _, rec = train_teacher(g, s, TrainConfig(teacher="gcn", max_epochs=200, patience=200, teacher_hidden=16))
    assert rec.test_acc >= 0.95


def test_patience_zero_stops_at_first_non_improvement(separable):
    g, s = separable
    _, rec = train_teacher(g, s, TrainConfig(teacher="gcn", max_epochs=200, patience=0, teacher_hidden=16))
    vals = [e["val_acc"] for e in rec.epochs]
    assert rec.best_epoch <= rec.stop_epoch
    assert vals[-1] <= max(vals[:-1])
    assert all(b > a for a, b in zip(vals[:-2], vals[1:-1]))


def test_reported_test_accuracy_is_from_best_checkpoint(sbm_graph, sbm_split, fast_cfg):
    params, rec = train_teacher(sbm_graph, sbm_split, fast_cfg)
    assert rec.best_val_acc == max(e["val_acc"] for e in rec.epochs)
    assert rec.test_acc == evaluate(params, sbm_graph, sbm_split, "test")
    assert evaluate(params, sbm_graph, sbm_split, "val") == rec.best_val_acc
    student, srec = distill_student(sbm_graph, sbm_split, params, fast_cfg)
    assert srec.test_acc == evaluate(student, sbm_graph, sbm_split, "test")


def test_training_is_deterministic(sbm_graph, sbm_split, fast_cfg):
    a = distill_student(sbm_graph, sbm_split, train_teacher(sbm_graph, sbm_split, fast_cfg)[0], fast_cfg)[1]
    b = distill_student(sbm_graph, sbm_split, train_teacher(sbm_graph, sbm_split, fast_cfg)[0], fast_cfg)[1]
    assert a.records() == b.records()


def test_zero_lambda_matches_glnn_path(sbm_graph, sbm_split, fast_cfg):
    teacher, _ = train_teacher(sbm_graph, sbm_split, fast_cfg)
    sig = teacher_signals(sbm_graph, sbm_split, teacher)
    cfg = fast_cfg.replace(lambda1=0.0, lambda2=0.0)
    p1, r1 = distill_student(sbm_graph, sbm_split, None, cfg, signals=sig, method=PGKD)
    p2, r2 = distill_student(sbm_graph, sbm_split, None, cfg, signals=sig, method=GLNN)
    for name in p1.weights:
        assert p1.weights[name].tobytes() == p2.weights[name].tobytes()
    assert [(e["total"], e["val_acc"]) for e in r1.epochs] == [(e["total"], e["val_acc"]) for e in r2.epochs]
    assert r1.test_acc == r2.test_acc


def test_one_hot_teacher_reaches_teacher_accuracy(separable):
    g, s = separable
    cfg = TrainConfig(teacher="gcn", teacher_hidden=16, student_hidden=16, max_epochs=200, patience=50)
    teacher, trec = train_teacher(g, s, cfg)
    sig = teacher_signals(g, s, teacher)
    onehot = np.eye(g.k)[g.labels] * 10.0
    _, rec = distill_student(g, s, None, cfg, signals=sig, signal_override=onehot)
    assert rec.test_acc >= trec.test_acc - 0.02


def test_student_ignores_edges_after_signal_caching(sbm_graph, sbm_split, fast_cfg):
    teacher, _ = train_teacher(sbm_graph, sbm_split, fast_cfg)
    sig = teacher_signals(sbm_graph, sbm_split, teacher)
    p1, r1 = distill_student(sbm_graph, sbm_split, None, fast_cfg, signals=sig)
    bare = sbm_graph.with_edges(np.zeros((0, 2), dtype=np.int64))
    p2, r2 = distill_student(bare, sbm_split, None, fast_cfg, signals=sig)
    assert r1.records() == r2.records()
    assert evaluate(p1, bare, sbm_split) == evaluate(p1, sbm_graph, sbm_split)


def test_inductive_test_features_never_used_in_training(sbm_graph, fast_cfg):
    s = make_split(sbm_graph, INDUCTIVE, train_per_class=10, ind_ratio=0.3, seed=1)
    x = sbm_graph.features.copy()
    x[s.test_ind] = np.random.default_rng(0).normal(scale=1e6, size=(s.test_ind.size, x.shape[1]))
    poisoned = sbm_graph.with_features(x)
    t1, tr1 = train_teacher(sbm_graph, s, fast_cfg)
    t2, tr2 = train_teacher(poisoned, s, fast_cfg)
    assert tr1.epochs == tr2.epochs
    r1 = distill_student(sbm_graph, s, None, fast_cfg, signals=teacher_signals(sbm_graph, s, t1))[1]
    r2 = distill_student(poisoned, s, None, fast_cfg, signals=teacher_signals(poisoned, s, t2))[1]
    assert r1.epochs == r2.epochs
    assert r1.test_ind_acc is not None and r1.test_acc == r1.test_ind_acc


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(sbm_graph, sbm_split, fast_cfg):
    with pytest.raises(DivergenceError) as exc:
        train_teacher(sbm_graph, sbm_split, fast_cfg.replace(lr_teacher=1e200, max_epochs=20))
    assert exc.value.record.status == "diverged"


def test_vanilla_student_runs(sbm_graph, sbm_split, fast_cfg):
    _, rec = distill_student(sbm_graph, sbm_split, None, fast_cfg, method=VANILLA)
    assert 0.0 <= rec.test_acc <= 1.0 and "kd" not in rec.epochs[0]


def test_random_params_near_chance():
    k, n = 7, 4000
    r = np.random.default_rng(0)
    g_labels = r.integers(0, k, size=n)
    p = M.init_params(M.MLP, [10, 16, k], seed=3)
    acc = accuracy(M.predict(p, r.normal(size=(n, 10)))[0], g_labels)
    assert abs(acc - 1 / k) <= 4 * math.sqrt((1 / k) * (1 - 1 / k) / n)


def test_accuracy_matches_count_oracle(rng):
    for _ in range(20):
        z = rng.normal(size=(15, 4))
        y = rng.integers(0, 4, size=15)
        assert accuracy(z, y) == oracles.accuracy(z.tolist(), y.tolist())


def test_mean_std_oracle(rng):
    v = rng.normal(size=9).tolist()
    m, s = mean_std(v)
    rm, rs = oracles.population_mean_std(v)
    assert abs(m - rm) < 1e-14 and abs(s - rs) < 1e-14


def test_grid_of_one_equals_single_run(sbm_graph, sbm_split, fast_cfg):
    rows = run_grid(sbm_graph, sbm_split, [(0.4, 0.05)], [2], fast_cfg)
    cfg = fast_cfg.replace(lambda1=0.4, lambda2=0.05, seed=2)
    teacher, _ = train_teacher(sbm_graph, sbm_split, cfg)
    _, rec = distill_student(sbm_graph, sbm_split, teacher, cfg)
    assert rows[0]["test_acc"] == rec.test_acc and rows[0]["val_acc"] == rec.best_val_acc
    assert rows[0]["epochs"] == rec.stop_epoch + 1


def test_grid_search_summary_and_parallel_equivalence(sbm_graph, sbm_split, fast_cfg):
    grid = [(0.1, 0.05), (0.4, 0.1)]
    rows, summary, best = grid_search(sbm_graph, sbm_split, grid, [0, 1], fast_cfg)
    assert len(rows) == 4 and len(summary) == 2
    par = run_grid(sbm_graph, sbm_split, grid, [0, 1], fast_cfg, jobs=3)
    strip = lambda rs: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rs]  # noqa: E731
    assert strip(rows) == strip(par)
    for srow in summary:
        vals = [r["val_acc"] for r in rows if (r["lambda1"], r["lambda2"]) == (srow["lambda1"], srow["lambda2"])]
        assert srow["val_mean"] == pytest.approx(oracles.population_mean_std(vals)[0], abs=1e-14)
    assert best["val_mean"] == max(r["val_mean"] for r in summarize_grid(rows))
