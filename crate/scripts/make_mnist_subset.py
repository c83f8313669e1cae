#!/usr/bin/env python3
"""Write the bundled 5k MNIST subset (shipped with mlxtend) as IDX files.

Usage: make_mnist_subset.py path/to/mlxtend-*.whl out_dir

Produces train-images-idx3-ubyte / train-labels-idx1-ubyte (400 per digit)
and t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte (100 per digit).
"""
import gzip
import random
import struct
import sys
import zipfile
from pathlib import Path


def write_idx(out: Path, stem: str, rows):
    images = bytearray(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
    labels = bytearray(struct.pack(">II", 0x00000801, len(rows)))
    for pixels, label in rows:
        images.extend(pixels)
        labels.append(label)
    (out / f"{stem}-images-idx3-ubyte").write_bytes(bytes(images))
    (out / f"{stem}-labels-idx1-ubyte").write_bytes(bytes(labels))


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    by_class = {k: [] for k in range(10)}
    for line in gzip.decompress(raw).decode().strip().split("\n"):
        values = [int(v) for v in line.split(",")]
        by_class[values[-1]].append((bytes(values[:-1]), values[-1]))
    rng = random.Random(20240101)
    train, test = [], []
    for k in range(10):
        rows = by_class[k]
        rng.shuffle(rows)
        train.extend(rows[:400])
        test.extend(rows[400:])
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(out, "train", train)
    write_idx(out, "t10k", test)


if __name__ == "__main__":
    main()
