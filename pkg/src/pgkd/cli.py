"""Command-line entry point: ``pgkd <subcommand> [options]``.

Experiments are described by a JSON config (see ``DEFAULT_CONFIG``); flags
override config values. The fully resolved config is hashed and every output
goes to ``<output_dir>/<config-hash>/<seed>/`` (multi-seed commands use
``<output_dir>/<config-hash>/<command>-seeds-<s1>-<s2>.../``).

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import analysis as A
from . import data as D
from . import models as M
from . import plotting as P
from .errors import CheckpointError, ConfigError, DataError, LoadError, ParameterError, PGKDError
from .graph import SETTINGS, Graph, SplitSpec, make_split
from .training import GLNN, GRID_COLUMNS, PGKD, TrainConfig, distill_student, evaluate, \
    run_grid, summarize_grid, teacher_signals, train_teacher

OUTPUT_ENV = "PGKD_OUTPUT_DIR"

TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "seed"]

DEFAULT_CONFIG = {
    "dataset": None,
    "output_dir": None,
    "seeds": [0, 1, 2, 3, 4],
    "split": {
        "setting": "transductive",
        "source": "random",
        "label_rate": None,
        "train_per_class": 20,
        "val_rate": 0.2,
        "ind_ratio": 0.0,
    },
    "train": {k: getattr(TrainConfig(), k) for k in TRAIN_KEYS},
    "grid": {"lambda1": [0.1, 0.2, 0.4], "lambda2": [0.05, 0.1]},
    "sweep": {
        "alphas": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "ratios": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        "capacity": [[2, 128], [2, 256], [2, 512], [3, 128], [3, 256], [3, 512]],
    },
}

SBM_KEYS = [f.name for f in fields(D.SbmConfig)]


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}", key=where)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object", key=where)
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", key="config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}", key="config") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", key="config")
    return _merge(DEFAULT_CONFIG, doc)


def config_hash(cfg: dict) -> str:
    """Digest of the resolved config, ignoring where outputs go and which seeds run."""
    body = {k: v for k, v in cfg.items() if k not in ("output_dir", "seeds")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _validate(cfg: dict) -> None:
    s = cfg["split"]
    if s["setting"] not in SETTINGS:
        raise ConfigError(f"split.setting must be one of {SETTINGS}", key="split.setting")
    if s["source"] not in ("random", "manifest"):
        raise ConfigError("split.source must be 'random' or 'manifest'", key="split.source")
    try:
        train_config(cfg, 0)
    except ConfigError as exc:
        raise ConfigError(str(exc), key=f"train.{exc.key}" if exc.key else "train") from None
    except TypeError as exc:
        raise ConfigError(f"bad training option: {exc}", key="train") from None
    if not cfg["seeds"] or not all(isinstance(x, int) and x >= 0 for x in cfg["seeds"]):
        raise ConfigError("seeds must be a non-empty list of non-negative integers", key="seeds")


def train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(**cfg["train"], seed=seed).validate()


def _dataset(cfg: dict) -> tuple[Graph, D.DatasetManifest]:
    if not cfg["dataset"]:
        raise ConfigError("no dataset manifest given (config 'dataset' or --dataset)", key="dataset")
    manifest = D.DatasetManifest.read(cfg["dataset"])
    return D.load_dataset(manifest), manifest


def _split(cfg: dict, g: Graph, manifest: D.DatasetManifest, seed: int) -> SplitSpec:
    s = cfg["split"]
    if s["source"] == "manifest":
        return D.load_split(manifest, g, s["setting"], s["ind_ratio"], seed)
    return make_split(g, s["setting"], label_rate=s["label_rate"], train_per_class=s["train_per_class"],
                      val_rate=s["val_rate"], ind_ratio=s["ind_ratio"], seed=seed)


def _out_root(cfg: dict) -> Path:
    return Path(cfg["output_dir"] or os.environ.get(OUTPUT_ENV) or "runs")


def _run_dir(cfg: dict, seed: int) -> Path:
    d = _out_root(cfg) / config_hash(cfg) / str(seed)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps({**cfg, "config_hash": config_hash(cfg), "seed": seed},
                                              indent=2, sort_keys=True) + "\n")
    return d


def _multi_dir(cfg: dict, command: str) -> Path:
    seeds = "-".join(str(s) for s in cfg["seeds"])
    d = _out_root(cfg) / config_hash(cfg) / f"{command}-seeds-{seeds}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps({**cfg, "config_hash": config_hash(cfg)},
                                              indent=2, sort_keys=True) + "\n")
    return d


def _provenance(cfg: dict, seeds) -> str:
    return f"config_hash={config_hash(cfg)} seeds={list(seeds)}"


def _write_timing(directory: Path, records) -> None:
    (directory / "timing.json").write_text(
        json.dumps({name: round(rec.wall_ms, 3) for name, rec in records}, sort_keys=True) + "\n")


def _stamped(rec, cfg: dict) -> list[dict]:
    h = config_hash(cfg)
    return [{"config_hash": h, **r} for r in rec.records()]


def _method(cfg: dict) -> str:
    t = cfg["train"]
    return GLNN if t["lambda1"] == 0 and t["lambda2"] == 0 else PGKD


# -- subcommands -------------------------------------------------------------------

def cmd_gen_sbm(args, cfg) -> int:
    values = {}
    if args.sbm_config:
        doc = json.loads(Path(args.sbm_config).read_text())
        for key in doc:
            if key not in SBM_KEYS:
                raise ConfigError(f"unknown sbm config key {key!r}", key=key)
        values.update(doc)
    for key in SBM_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if args.seed is not None:
        values["seed"] = args.seed
    sbm = D.SbmConfig(**values)
    g = D.generate_sbm(sbm)
    path = D.save_dataset(g, args.out)
    (Path(args.out) / "sbm_config.json").write_text(json.dumps(asdict(sbm), indent=2, sort_keys=True) + "\n")
    print(json.dumps({"manifest": str(path), "n": g.n, "edges": g.num_edges, "k": g.k}))
    return 0


def cmd_split(args, cfg) -> int:
    seed = _seed(args, cfg)
    g, manifest = _dataset(cfg)
    split = _split(cfg, g, manifest, seed)
    out = Path(args.out) if args.out else _run_dir(cfg, seed) / "split.json"
    out.write_text(json.dumps(split.to_dict(), sort_keys=True) + "\n")
    print(json.dumps({"split": str(out), "train": int(split.train.size), "val": int(split.val.size),
                      "test_obs": int(split.test_obs.size), "test_ind": int(split.test_ind.size)}))
    return 0


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else cfg["seeds"][0]


def _teacher(args, cfg, g, split, seed, run_dir):
    tcfg = train_config(cfg, seed)
    if getattr(args, "teacher_checkpoint", None):
        params, _ = D.load_checkpoint(args.teacher_checkpoint)
        return params, None
    params, rec = train_teacher(g, split, tcfg)
    D.write_jsonl(run_dir / "teacher_metrics.jsonl", _stamped(rec, cfg))
    D.save_checkpoint(run_dir / "teacher.ckpt", params,
                      {"config_hash": config_hash(cfg), "seed": seed, "role": "teacher", "train": asdict(tcfg)})
    return params, rec


def cmd_train_teacher(args, cfg) -> int:
    seed = _seed(args, cfg)
    g, manifest = _dataset(cfg)
    split = _split(cfg, g, manifest, seed)
    run_dir = _run_dir(cfg, seed)
    _, rec = _teacher(args, cfg, g, split, seed, run_dir)
    _write_timing(run_dir, [("teacher", rec)])
    print(json.dumps({"dir": str(run_dir), "test_acc": rec.test_acc, "best_epoch": rec.best_epoch}))
    return 0


def cmd_distill(args, cfg) -> int:
    seed = _seed(args, cfg)
    g, manifest = _dataset(cfg)
    split = _split(cfg, g, manifest, seed)
    run_dir = _run_dir(cfg, seed)
    teacher, trec = _teacher(args, cfg, g, split, seed, run_dir)
    scfg = train_config(cfg, seed)
    method = _method(cfg)
    student, rec = distill_student(g, split, teacher, scfg, method=method)
    D.write_jsonl(run_dir / "student_metrics.jsonl", _stamped(rec, cfg))
    D.save_checkpoint(run_dir / "student.ckpt", student,
                      {"config_hash": config_hash(cfg), "seed": seed, "role": "student", "method": method,
                       "train": asdict(scfg)})
    _write_timing(run_dir, [("teacher", trec)] * (trec is not None) + [("student", rec)])
    print(json.dumps({"dir": str(run_dir), "method": method, "test_acc": rec.test_acc,
                      "teacher_test_acc": None if trec is None else trec.test_acc}))
    return 0


def cmd_evaluate(args, cfg) -> int:
    seed = _seed(args, cfg)
    g, manifest = _dataset(cfg)
    split = _split(cfg, g, manifest, seed)
    params, meta = D.load_checkpoint(args.checkpoint)
    acc = evaluate(params, g, split, args.nodes)
    print(json.dumps({"checkpoint": str(args.checkpoint), "nodes": args.nodes, "accuracy": acc}))
    return 0


def cmd_grid(args, cfg) -> int:
    g, manifest = _dataset(cfg)
    out = _multi_dir(cfg, "grid")
    seeds = cfg["seeds"]
    grid = [(l1, l2) for l1 in cfg["grid"]["lambda1"] for l2 in cfg["grid"]["lambda2"]]
    base = train_config(cfg, seeds[0])
    rows = []
    for seed in seeds:
        split = _split(cfg, g, manifest, seed)
        rows += run_grid(g, split, grid, [seed], base, jobs=args.jobs)
    rows.sort(key=lambda r: (grid.index((r["lambda1"], r["lambda2"])), seeds.index(r["seed"])))
    summary = summarize_grid(rows)
    prov = _provenance(cfg, seeds)
    D.write_csv(out / "grid_runs.csv", rows, [c for c in GRID_COLUMNS if c != "wall_ms"], prov)
    D.write_csv(out / "grid_timing.csv", rows, ["lambda1", "lambda2", "seed", "wall_ms"], prov)
    D.write_csv(out / "grid_summary.csv", summary,
                ["lambda1", "lambda2", "n_seeds", "val_mean", "val_std", "test_mean", "test_std", "best"], prov)
    P.plot_grid(summary, out / "grid.png")
    best = next(r for r in summary if r["best"])
    print(json.dumps({"dir": str(out), "rows": len(rows), "best": best}))
    return 0


def _train_three(cfg, g, split, seed):
    tcfg = train_config(cfg, seed)
    teacher, _ = train_teacher(g, split, tcfg)
    signals = teacher_signals(g, split, teacher)
    glnn, _ = distill_student(g, split, None, tcfg, signals=signals, method=GLNN)
    pgkd, _ = distill_student(g, split, None, tcfg, signals=signals, method=PGKD)
    return teacher, glnn, pgkd


def cmd_analyze(args, cfg) -> int:
    seed = _seed(args, cfg)
    g, manifest = _dataset(cfg)
    split = _split(cfg, g, manifest, seed)
    run_dir = _run_dir(cfg, seed)
    teacher, glnn, pgkd = _train_three(cfg, g, split, seed)
    reps = {"teacher": A.representations(teacher, g), "glnn": A.representations(glnn, g),
            "pgkd": A.representations(pgkd, g)}
    prov = _provenance(cfg, [seed])
    if args.what == "dist":
        rows = [{"source": "features", "avg_connected_l2": A.connected_node_distance(g.features, g.edges)}]
        rows += [{"source": k, "avg_connected_l2": A.connected_node_distance(h, g.edges)} for k, h in reps.items()]
        D.write_csv(run_dir / "connected_distance.csv", rows, ["source", "avg_connected_l2"], prov)
        print(json.dumps({"dir": str(run_dir), "rows": rows}))
        return 0
    metrics = {k: A.inter_class_spearman(h, g.labels, g.edges, g.k) for k, h in reps.items()}
    rows = [{"source": k, "spearman_rho": m.spearman_rho, "degenerate": int(m.degenerate)}
            for k, m in metrics.items()]
    pair_rows = [{"source": k, **p} for k, m in metrics.items() for p in m.pairs]
    D.write_csv(run_dir / "spearman.csv", rows, ["source", "spearman_rho", "degenerate"], prov)
    D.write_csv(run_dir / "spearman_pairs.csv", pair_rows,
                ["source", "class_a", "class_b", "distance", "inter_edges"], prov)
    P.plot_structure(metrics, run_dir / "spearman.png")
    print(json.dumps({"dir": str(run_dir), "rows": rows}))
    return 0


def cmd_sweep(args, cfg) -> int:
    g, manifest = _dataset(cfg)
    seeds = cfg["seeds"]
    out = _multi_dir(cfg, f"sweep-{args.what}")
    base = train_config(cfg, seeds[0])
    prov = _provenance(cfg, seeds)
    if args.what == "noise":
        rows = []
        for seed in seeds:
            split = _split(cfg, g, manifest, seed)
            rows += A.noise_sweep(g, split, base, cfg["sweep"]["alphas"], [seed], jobs=args.jobs)
        rows.sort(key=lambda r: (r["alpha"], seeds.index(r["seed"])))
        D.write_csv(out / "noise.csv", rows, A.NOISE_COLUMNS, prov + " noise=gaussian_column_std")
        P.plot_noise_sweep(rows, out / "noise.png")
    elif args.what == "ratio":
        s = cfg["split"]
        kwargs = {"label_rate": s["label_rate"], "train_per_class": s["train_per_class"], "val_rate": s["val_rate"]}
        rows = A.split_ratio_sweep(g, base, cfg["sweep"]["ratios"], seeds, kwargs, jobs=args.jobs)
        D.write_csv(out / "ratio.csv", rows, A.RATIO_COLUMNS, prov)
        P.plot_ratio_sweep(rows, out / "ratio.png")
    else:
        settings = [tuple(x) for x in cfg["sweep"]["capacity"]]
        rows = []
        for seed in seeds:
            split = _split(cfg, g, manifest, seed)
            rows += A.capacity_sweep(g, split, settings, [seed], base, jobs=args.jobs)
        rows.sort(key=lambda r: (settings.index((r["layers"], r["width"])), seeds.index(r["seed"])))
        D.write_csv(out / "capacity.csv", rows, A.CAPACITY_COLUMNS + ["teacher_acc"], prov)
        P.plot_capacity_sweep(rows, out / "capacity.png")
    print(json.dumps({"dir": str(out), "rows": len(rows)}))
    return 0


def cmd_export(args, cfg) -> int:
    g, _ = _dataset(cfg)
    params, _ = D.load_checkpoint(args.checkpoint)
    h = A.export_embeddings(params, g, args.out, args.which)
    print(json.dumps({"out": str(args.out), "rows": int(h.shape[0]), "dim": int(h.shape[1])}))
    return 0


# -- parser --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common(p: argparse.ArgumentParser, train_flags: bool = True):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", help="dataset manifest (overrides config)")
    p.add_argument("--out-dir", dest="output_dir", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
    p.add_argument("--seed", type=int, help="run seed (default: first config seed)")
    p.add_argument("--seeds", type=int, nargs="+", help="seed list for multi-seed commands")
    p.add_argument("--setting", choices=SETTINGS)
    p.add_argument("--ind-ratio", type=float)
    p.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")
    if train_flags:
        p.add_argument("--teacher", choices=M.TEACHERS)
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
        p.add_argument("--tau1", type=float)
        p.add_argument("--tau2", type=float)
        p.add_argument("--tau-kd", type=float)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--glnn", action="store_true", help="shortcut for --lambda1 0 --lambda2 0")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgkd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-sbm", help="write a synthetic SBM dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--sbm-config", help="JSON with SbmConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--nodes-per-block", dest="nodes_per_block", type=int)
    p.add_argument("--p-intra", dest="p_intra", type=float)
    p.add_argument("--p-inter", dest="p_inter", type=float)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--separation", dest="feature_center_separation", type=float)
    p.add_argument("--noise-std", dest="feature_noise_std", type=float)
    p.add_argument("--name", type=str)
    p.set_defaults(func=cmd_gen_sbm, needs_config=False)

    p = sub.add_parser("split", help="write a split file")
    _common(p, train_flags=False)
    p.add_argument("--out", help="split JSON path (default inside the run directory)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-teacher", help="train the GNN teacher")
    _common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="train the GNN teacher then distill an MLP student")
    _common(p)
    p.add_argument("--teacher-checkpoint", help="reuse a saved teacher instead of training one")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint on a node set")
    _common(p, train_flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nodes", default="test", choices=["train", "val", "test", "test_obs", "test_ind"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="lambda grid search over seeds")
    _common(p)
    p.add_argument("--lambda1-grid", type=float, nargs="+")
    p.add_argument("--lambda2-grid", type=float, nargs="+")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("analyze", help="structure metrics of teacher / GLNN / PGKD representations")
    p.add_argument("what", choices=["dist", "spearman"])
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="noise, inductive split-ratio or student capacity sweep")
    p.add_argument("what", choices=["noise", "ratio", "capacity"])
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-embeddings", help="write node representations of a checkpoint to CSV")
    _common(p, train_flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=["hidden", "logits"], default="hidden")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def _apply_flags(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "dataset", None):
        cfg["dataset"] = args.dataset
    if getattr(args, "output_dir", None):
        cfg["output_dir"] = args.output_dir
    if getattr(args, "seeds", None):
        cfg["seeds"] = list(args.seeds)
    if getattr(args, "setting", None):
        cfg["split"]["setting"] = args.setting
    if getattr(args, "ind_ratio", None) is not None:
        cfg["split"]["ind_ratio"] = args.ind_ratio
    for flag, key in (("teacher", "teacher"), ("lambda1", "lambda1"), ("lambda2", "lambda2"),
                      ("tau1", "tau1"), ("tau2", "tau2"), ("tau_kd", "tau_kd"),
                      ("max_epochs", "max_epochs"), ("patience", "patience")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg["train"][key] = value
    if getattr(args, "glnn", False):
        cfg["train"]["lambda1"] = 0.0
        cfg["train"]["lambda2"] = 0.0
    if getattr(args, "lambda1_grid", None):
        cfg["grid"]["lambda1"] = list(args.lambda1_grid)
    if getattr(args, "lambda2_grid", None):
        cfg["grid"]["lambda2"] = list(args.lambda2_grid)
    for key in ("lambda1", "lambda2", "tau1", "tau2", "tau_kd"):
        cfg["train"][key] = float(cfg["train"][key])
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "needs_config", True):
            cfg = _apply_flags(load_config(args.config), args)
            _validate(cfg)
        else:
            cfg = None
        return args.func(args, cfg)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"pgkd: configuration error{key}: {exc}", file=sys.stderr)
        return 1
    except (DataError, LoadError, CheckpointError, ParameterError) as exc:
        print(f"pgkd: invalid input: {exc}", file=sys.stderr)
        return 1
    except PGKDError as exc:
        print(f"pgkd: run failed: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"pgkd: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
