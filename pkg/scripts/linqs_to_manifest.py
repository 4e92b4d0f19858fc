#!/usr/bin/env python3
"""Convert a LINQS citation dataset (``<name>.content`` + ``<name>.cites``) to a
pgkd dataset directory.

    python3 scripts/linqs_to_manifest.py cora/ data/cora --name cora

Nodes keep the order of the .content file. Class ids follow the sorted class
names. Citations naming a document absent from .content are dropped and counted
(Citeseer has a handful), as are self-citations.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from pgkd.data import save_dataset
from pgkd.graph import Graph


def convert(src: Path, name: str) -> tuple[Graph, dict]:
    content = src / f"{name}.content"
    cites = src / f"{name}.cites"
    ids, rows, classes = [], [], []
    with open(content) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:-1]])
            classes.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    names = sorted(set(classes))
    labels = np.array([names.index(c) for c in classes], dtype=np.int64)
    edges, dropped, loops = [], 0, 0
    with open(cites) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2:
                continue
            a, b = parts
            if a not in index or b not in index:
                dropped += 1
                continue
            if a == b:
                loops += 1
                continue
            edges.append((index[a], index[b]))
    g = Graph(np.array(rows), labels, np.array(edges, dtype=np.int64).reshape(-1, 2), len(names), name)
    return g, {"classes": names, "dropped_citations": dropped, "self_citations": loops}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("src", type=Path, help="directory holding <name>.content and <name>.cites")
    p.add_argument("out", type=Path, help="output dataset directory")
    p.add_argument("--name", required=True, help="dataset file stem, e.g. cora or citeseer")
    args = p.parse_args(argv)
    g, info = convert(args.src, args.name)
    manifest = save_dataset(g, args.out)
    print(f"{manifest}: n={g.n} d={g.d} k={g.k} undirected_edges={g.num_edges} "
          f"dropped={info['dropped_citations']} self={info['self_citations']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
