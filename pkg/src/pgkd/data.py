"""Dataset manifests, synthetic SBM graphs, checkpoints and metrics files.

On-disk dataset layout (all paths in the manifest are relative to it)::

    manifest.json   {"format_version": 1, "name": "cora", "n": 2708, "d": 1433, "k": 7,
                     "features": "features.csv", "labels": "labels.csv", "edges": "edges.csv",
                     "splits": {"train": "train.txt", "val": "val.txt", "test": "test.txt"}}
    features.csv    one row per node, D comma-separated numbers, row i is node i
    labels.csv      node_id,class_id   (optional header line)
    edges.csv       src,dst            (optional header line; symmetrized on load)

``splits`` is optional; each split file lists one node id per line.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import CheckpointError, ConfigError, LoadError
from .graph import Graph, SplitSpec, split_from_ids

MANIFEST_VERSION = 1
CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"PGKDCKPT"


@dataclass
class DatasetManifest:
    name: str
    features: Path
    labels: Path
    edges: Path
    n: int
    d: int
    k: int
    splits: dict[str, Path] = field(default_factory=dict)

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise LoadError(path, None, "manifest not found") from None
        except json.JSONDecodeError as exc:
            raise LoadError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
        allowed = {"format_version", "name", "n", "d", "k", "features", "labels", "edges", "splits"}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise LoadError(path, None, f"unknown manifest key {unknown[0]!r}")
        version = doc.get("format_version")
        if version != MANIFEST_VERSION:
            raise LoadError(path, None, f"unsupported manifest format_version {version!r}")
        for key in ("name", "n", "d", "k", "features", "labels", "edges"):
            if key not in doc:
                raise LoadError(path, None, f"missing manifest key {key!r}")
        base = path.parent
        splits = {name: base / p for name, p in doc.get("splits", {}).items()}
        bad = sorted(set(splits) - {"train", "val", "test"})
        if bad:
            raise LoadError(path, None, f"unknown split name {bad[0]!r}")
        return cls(doc["name"], base / doc["features"], base / doc["labels"], base / doc["edges"],
                   int(doc["n"]), int(doc["d"]), int(doc["k"]), splits)

    def write(self, path) -> None:
        path = Path(path)
        base = path.parent

        def rel(p):
            p = Path(p)
            try:
                return str(p.relative_to(base))
            except ValueError:
                return str(p)

        doc = {
            "format_version": MANIFEST_VERSION,
            "name": self.name,
            "n": self.n,
            "d": self.d,
            "k": self.k,
            "features": rel(self.features),
            "labels": rel(self.labels),
            "edges": rel(self.edges),
        }
        if self.splits:
            doc["splits"] = {k: rel(v) for k, v in sorted(self.splits.items())}
        path.write_text(json.dumps(doc, indent=2) + "\n")


def _read_lines(path: Path) -> list[str]:
    try:
        return path.read_text().splitlines()
    except FileNotFoundError:
        raise LoadError(path, None, "file not found") from None


def _is_header(line: str) -> bool:
    first = line.split(",")[0].strip()
    try:
        float(first)
        return False
    except ValueError:
        return True


def _parse_rows(path: Path, lines: list[str], width: int | None, kind, skip_header: bool):
    """Parse numeric CSV rows into ``(lineno, values)`` pairs (1-based line numbers)."""
    rows = []
    start = 1 if skip_header and lines and _is_header(lines[0]) else 0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is not None and len(cells) != width:
            raise LoadError(path, lineno, f"expected {width} columns, found {len(cells)}")
        values = []
        for cell in cells:
            try:
                values.append(kind(cell))
            except ValueError:
                raise LoadError(path, lineno, f"non-numeric cell {cell.strip()!r}") from None
        rows.append((lineno, values))
    return rows


def _int(cell: str) -> int:
    return int(cell.strip())


def load_dataset(manifest) -> Graph:
    """Load and validate a dataset; never returns a partially valid graph."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    m = manifest

    rows = _parse_rows(m.features, _read_lines(m.features), m.d, float, skip_header=False)
    if len(rows) != m.n:
        raise LoadError(m.features, None, f"declared {m.n} nodes but found {len(rows)} feature rows")
    features = np.array([r for _, r in rows], dtype=np.float64).reshape(m.n, m.d)
    bad = ~np.isfinite(features).all(axis=1)
    if bad.any():
        raise LoadError(m.features, rows[int(np.argmax(bad))][0], "non-finite feature value")

    labels = np.full(m.n, -1, dtype=np.int64)
    for lineno, (node, cls) in _parse_rows(m.labels, _read_lines(m.labels), 2, _int, skip_header=True):
        if not 0 <= node < m.n:
            raise LoadError(m.labels, lineno, f"node id {node} outside [0, {m.n})")
        if not 0 <= cls < m.k:
            raise LoadError(m.labels, lineno, f"class id {cls} outside [0, {m.k})")
        if labels[node] != -1:
            raise LoadError(m.labels, lineno, f"duplicate label for node {node}")
        labels[node] = cls
    if (labels < 0).any():
        raise LoadError(m.labels, None, f"node {int(np.argmax(labels < 0))} has no label")

    edge_rows = _parse_rows(m.edges, _read_lines(m.edges), 2, _int, skip_header=True)
    for lineno, (u, v) in edge_rows:
        if not (0 <= u < m.n and 0 <= v < m.n):
            raise LoadError(m.edges, lineno, f"edge ({u}, {v}) references a node outside [0, {m.n})")
    edges = np.array([r for _, r in edge_rows], dtype=np.int64).reshape(-1, 2)
    return Graph(features, labels, edges, m.k, m.name)


def _read_ids(path: Path) -> np.ndarray:
    rows = _parse_rows(path, _read_lines(path), 1, _int, skip_header=True)
    return np.array([r[0] for _, r in rows], dtype=np.int64)


def load_split(manifest, g: Graph, setting: str, ind_ratio: float = 0.0, seed: int = 0) -> SplitSpec:
    """Split built from the manifest's explicit id files."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    missing = {"train", "val", "test"} - set(manifest.splits)
    if missing:
        raise ConfigError(f"manifest lacks split file(s) {sorted(missing)}", key="splits")
    ids = {k: _read_ids(p) for k, p in manifest.splits.items()}
    return split_from_ids(g, ids["train"], ids["val"], ids["test"], setting, ind_ratio, seed)


def _format_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_dataset(g: Graph, directory, split: SplitSpec | None = None) -> Path:
    """Write ``g`` in the manifest layout; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "features.csv", "w") as fh:
        for row in g.features:
            fh.write(_format_row(row) + "\n")
    with open(out / "labels.csv", "w") as fh:
        fh.write("node_id,class_id\n")
        for i, c in enumerate(g.labels):
            fh.write(f"{i},{int(c)}\n")
    with open(out / "edges.csv", "w") as fh:
        fh.write("src,dst\n")
        for u, v in g.edges:
            fh.write(f"{int(u)},{int(v)}\n")
    splits = {}
    if split is not None:
        for name, ids in (("train", split.train), ("val", split.val), ("test", split.test)):
            p = out / f"{name}.txt"
            p.write_text("".join(f"{int(i)}\n" for i in ids))
            splits[name] = p
    manifest = DatasetManifest(g.name, out / "features.csv", out / "labels.csv", out / "edges.csv",
                               g.n, g.d, g.k, splits)
    manifest.write(out / "manifest.json")
    return out / "manifest.json"


@dataclass
class SbmConfig:
    """Stochastic block model with class-centred Gaussian features.

    ``p_matrix`` (k x k, symmetric) overrides ``p_intra``/``p_inter`` to plant
    a non-uniform block geometry.
    """

    k: int = 3
    nodes_per_block: int = 100
    p_intra: float = 0.1
    p_inter: float = 0.01
    feature_dim: int = 16
    feature_center_separation: float = 1.0
    feature_noise_std: float = 1.0
    seed: int = 0
    p_matrix: list[list[float]] | None = None
    name: str = "sbm"

    def validate(self) -> np.ndarray:
        for key in ("k", "nodes_per_block", "feature_dim"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be positive", key=key)
        if self.feature_noise_std < 0:
            raise ConfigError("feature_noise_std must be non-negative", key="feature_noise_std")
        if self.p_matrix is not None:
            p = np.asarray(self.p_matrix, dtype=np.float64)
            if p.shape != (self.k, self.k) or not np.allclose(p, p.T):
                raise ConfigError("p_matrix must be a symmetric k x k matrix", key="p_matrix")
        else:
            p = np.full((self.k, self.k), float(self.p_inter))
            np.fill_diagonal(p, float(self.p_intra))
        if ((p < 0) | (p > 1)).any():
            raise ConfigError("block probabilities must lie in [0, 1]", key="p_matrix")
        return p


def generate_sbm(cfg: SbmConfig) -> Graph:
    """Sample an SBM graph.

    Nodes are block-contiguous (node i has label ``i // nodes_per_block``).
    Draw order from the ``sbm`` stream: one uniform per unordered pair
    ``i < j`` in row-major upper-triangle order (edge iff ``u < p``), then an
    ``n x feature_dim`` standard-normal noise matrix. Class centres are
    ``separation * e_c`` when ``feature_dim >= k`` (mutually equidistant),
    otherwise ``separation`` times a standard-normal draw taken after the noise.
    """
    p = cfg.validate()
    n = cfg.k * cfg.nodes_per_block
    labels = np.repeat(np.arange(cfg.k), cfg.nodes_per_block)
    gen = rng.stream(cfg.seed, "sbm")
    iu, ju = np.triu_indices(n, k=1)
    draws = gen.random(iu.size)
    keep = draws < p[labels[iu], labels[ju]]
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    noise = gen.standard_normal((n, cfg.feature_dim))
    if cfg.feature_dim >= cfg.k:
        centers = np.zeros((cfg.k, cfg.feature_dim))
        centers[np.arange(cfg.k), np.arange(cfg.k)] = 1.0
    else:
        centers = gen.standard_normal((cfg.k, cfg.feature_dim))
    features = cfg.feature_center_separation * centers[labels] + cfg.feature_noise_std * noise
    return Graph(features, labels, edges, cfg.k, cfg.name)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, params, meta: dict | None = None) -> None:
    """Write ``params`` (a :class:`pgkd.models.ModelParams`) as a JSON header
    followed by little-endian float64 arrays in parameter order."""
    arrays = [np.ascontiguousarray(params.weights[name], dtype="<f8") for name in params.weights]
    payload = b"".join(a.tobytes() for a in arrays)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "dims": list(params.dims),
        "options": params.options,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(params.weights, arrays)],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_checkpoint(path, expected_kind: str | None = None):
    """Inverse of :func:`save_checkpoint`; returns ``(ModelParams, meta)``."""
    from .models import ModelParams, expected_shapes

    blob = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 12
    if len(blob) < head or blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a pgkd checkpoint or truncated header")
    version, hlen = struct.unpack("<IQ", blob[len(CHECKPOINT_MAGIC):head])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(blob) < head + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[head: head + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    payload = blob[head + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: corrupt or truncated payload "
                              f"({len(payload)} of {header.get('payload_bytes')} bytes)")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    if expected_kind is not None and header["kind"] != expected_kind:
        raise CheckpointError(f"{path}: model kind {header['kind']!r}, expected {expected_kind!r}")
    weights = {}
    offset = 0
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        weights[t["name"]] = arr.astype(np.float64)
        offset += count * 8
    want = expected_shapes(header["kind"], header["dims"])
    got = {k: v.shape for k, v in weights.items()}
    if got != want:
        raise CheckpointError(f"{path}: tensor shapes {got} do not match {header['kind']} dims {header['dims']}")
    params = ModelParams(header["kind"], list(header["dims"]), weights, dict(header["options"]))
    return params, header["meta"]


# -- metrics -------------------------------------------------------------------

def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_csv(path, rows: list[dict], columns: list[str], comment: str | None = None) -> None:
    """CSV with an optional leading ``# ...`` provenance line."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _csv_cell(row.get(c)) for c in columns})
    Path(path).write_text(buf.getvalue())


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def config_dict(obj) -> dict:
    return asdict(obj)
