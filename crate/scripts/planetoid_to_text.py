#!/usr/bin/env python3
"""Convert raw Planetoid files (ind.<name>.x, .tx, .allx, .y, .ty, .ally,
.graph, .test.index) into the text layout read by `deepgcn --data`.

    python3 scripts/planetoid_to_text.py RAW_DIR cora data/cora

Needs numpy and scipy (the raw files are pickled scipy matrices).
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(raw: Path, name: str, out: Path) -> None:
    x, y, tx, ty, allx, ally, graph = (
        load(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph")
    )
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = sorted(test_index)

    # Citeseer has test indices with no node behind them; pad with empty rows.
    span = test_sorted[-1] - test_sorted[0] + 1
    if span != len(test_sorted):
        tx_full = sp.lil_matrix((span, tx.shape[1]))
        ty_full = np.zeros((span, ty.shape[1]))
        offsets = [i - test_sorted[0] for i in test_sorted]
        tx_full[offsets, :] = tx
        ty_full[offsets, :] = ty
        tx, ty = tx_full, ty_full

    features = sp.vstack((allx, tx)).tolil()
    labels = np.vstack((ally, ty))
    features[test_index, :] = features[test_sorted, :]
    labels[test_index, :] = labels[test_sorted, :]
    features = features.tocsr()

    n, dim = features.shape
    classes = labels.shape[1]
    train = range(len(y))
    held_out = set(test_sorted)
    val = [i for i in range(len(y), min(len(y) + 500, n)) if i not in held_out]

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "features.txt", "w") as f:
        f.write(f"# features: {dim}\n")
        for i in range(n):
            row = features.getrow(i)
            pairs = " ".join(f"{j}:{float(v)!r}" for j, v in zip(row.indices, row.data))
            f.write(f"{i} {pairs}\n" if pairs else f"{i}\n")
    with open(out / "labels.txt", "w") as f:
        f.write(f"# classes: {classes}\n")
        for i in range(n):
            # Padded rows have an all-zero label vector; they join no split.
            f.write(f"{i} {int(labels[i].argmax())}\n")
    with open(out / "edges.txt", "w") as f:
        seen = set()
        for u, nbrs in graph.items():
            for v in nbrs:
                if u >= n or v >= n:
                    continue
                e = (min(u, v), max(u, v))
                if e not in seen:
                    seen.add(e)
                    f.write(f"{e[0]} {e[1]}\n")
    with open(out / "splits.txt", "w") as f:
        for name_, idx in (("train", train), ("val", val), ("test", test_sorted)):
            for i in idx:
                f.write(f"{i} {name_}\n")
    print(f"{name}: {n} nodes, {len(seen)} edges, {dim} features, {classes} classes -> {out}")


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("raw", type=Path, help="directory with the ind.<name>.* files")
    p.add_argument("name", help="cora, citeseer or pubmed")
    p.add_argument("out", type=Path)
    args = p.parse_args()
    convert(args.raw, args.name, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
