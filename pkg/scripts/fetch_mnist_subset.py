#!/usr/bin/env python3
"""Write a 5000-image MNIST subset as IDX files.

The subset is the ``mnist_5k.csv.gz`` table that ships inside the mlxtend
wheel (500 images per digit; 784 pixel columns followed by the label).  It
is split per class into a training pool and a test pool and written under
``data/mnist/`` with the standard IDX file names.

Usage: python scripts/fetch_mnist_subset.py [--out data/mnist] [--test-per-class 100]
"""

from __future__ import annotations

import argparse
import gzip
import io
import os
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

from rfquant.dataio import encode_idx
from rfquant.experiments import MNIST_FILES

WHEEL = "mlxtend==0.24.0"
MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def download_table() -> np.ndarray:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:", "-d", tmp, WHEEL],
            check=True,
            stdout=subprocess.DEVNULL,
        )
        (wheel,) = [f for f in os.listdir(tmp) if f.endswith(".whl")]
        with zipfile.ZipFile(os.path.join(tmp, wheel)) as zf:
            raw = gzip.decompress(zf.read(MEMBER))
    return np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)


def split(table: np.ndarray, test_per_class: int, seed: int):
    images = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    rng = np.random.default_rng(seed)
    test = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        test.append(rng.choice(idx, size=test_per_class, replace=False))
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(labels.size), test)
    return (images[train], labels[train]), (images[test], labels[test])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    table = download_table()
    (xtr, ytr), (xte, yte) = split(table, args.test_per_class, args.seed)
    os.makedirs(args.out, exist_ok=True)
    payloads = {"train_images": xtr, "train_labels": ytr, "test_images": xte, "test_labels": yte}
    for key, arr in payloads.items():
        with open(os.path.join(args.out, MNIST_FILES[key]), "wb") as fh:
            fh.write(encode_idx(arr, (28, 28) if arr.ndim == 2 else None))
    print(f"train {len(ytr)} test {len(yte)} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
