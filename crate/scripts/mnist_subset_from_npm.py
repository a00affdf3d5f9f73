#!/usr/bin/env python3
"""Build IDX files from the 10,000-digit MNIST subset bundled in the npm `mnist` package.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist

Writes train-images-idx3-ubyte and train-labels-idx1-ubyte (big-endian IDX,
magic 0x00000803 / 0x00000801). Samples are interleaved with a fixed
permutation so that any prefix is roughly class balanced.
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main() -> None:
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"], dtype=np.float64)
        n = raw.size // 784
        px = np.clip(np.rint(raw[: n * 784] * 255.0), 0, 255).astype(np.uint8).reshape(n, 784)
        images.append(px)
        labels.append(np.full(n, digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    perm = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[perm], labels[perm]
    with open(dst / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(labels), 28, 28))
        f.write(images.tobytes())
    with open(dst / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(labels)} samples to {dst}; per-class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main()
