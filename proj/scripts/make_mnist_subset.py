#!/usr/bin/env python3
"""Write a small MNIST subset as IDX files.

Two sources are understood, both fetched through a package manager:

  * the 10000-digit set in the `mnist` npm package (src/digits/<d>.json,
    pixels stored as v/255 rounded to 3 decimals; round(v*255) recovers them):

        npm pack mnist@1.1.0
        python3 scripts/make_mnist_subset.py mnist-1.1.0.tgz data/mnist-10k 8000

  * the 5000-sample CSV inside the mlxtend wheel
    (mlxtend/data/data/mnist_5k.csv.gz; label column first or last):

        pip download mlxtend==0.24.0 --no-deps -d /tmp/pkgs
        python3 scripts/make_mnist_subset.py /tmp/pkgs/mlxtend-0.24.0-py3-none-any.whl data/mnist-5k 4000

Samples are shuffled with a fixed seed, then split into train/test.
"""
import gzip
import io
import json
import struct
import sys
import tarfile
import zipfile
from pathlib import Path

import numpy as np

WHEEL_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_idx(path, arr, magic):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in arr.shape:
            f.write(struct.pack(">I", d))
        f.write(arr.astype(np.uint8).tobytes())


def from_wheel(path):
    with zipfile.ZipFile(path) as z:
        raw = gzip.decompress(z.read(WHEEL_MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    # label column is the one whose values are all < 10
    if table[:, -1].max() < 10:
        return table[:, :-1], table[:, -1]
    return table[:, 1:], table[:, 0]


def from_npm(path):
    pixels, labels = [], []
    with tarfile.open(path) as t:
        for d in range(10):
            data = json.load(t.extractfile(f"package/src/digits/{d}.json"))["data"]
            block = np.rint(np.asarray(data, dtype=np.float64) * 255).astype(np.int64).reshape(-1, 784)
            pixels.append(block)
            labels.append(np.full(len(block), d, dtype=np.int64))
    return np.concatenate(pixels), np.concatenate(labels)


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    pixels, labels = from_npm(src) if src.suffix == ".tgz" else from_wheel(src)
    n_train = int(sys.argv[3]) if len(sys.argv) > 3 else (len(labels) * 4) // 5
    assert pixels.shape[1] == 784 and 0 <= pixels.min() and pixels.max() <= 255
    rng = np.random.default_rng(0)
    order = rng.permutation(len(labels))
    labels, pixels = labels[order], pixels[order].reshape(-1, 28, 28)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", pixels[:n_train], 0x803)
    write_idx(out / "train-labels-idx1-ubyte", labels[:n_train], 0x801)
    write_idx(out / "t10k-images-idx3-ubyte", pixels[n_train:], 0x803)
    write_idx(out / "t10k-labels-idx1-ubyte", labels[n_train:], 0x801)
    print(f"train {n_train}, test {len(labels) - n_train}, class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main()
