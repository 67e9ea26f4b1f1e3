#!/usr/bin/env python3
"""Write a 5000-image MNIST subset as IDX files.

The images come from the 5k-sample MNIST extract bundled with the mlxtend
wheel, so only a PyPI index is needed. Samples are shuffled with a fixed seed
and split into train (first 4096) and test (remainder).
"""
import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/mnist-subset")
    parser.add_argument("--train", type=int, default=4096)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                               "mlxtend==0.24.0", "-d", tmp, "-q"])
        wheel = next(pathlib.Path(tmp).glob("mlxtend-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    images, labels = table[:, :-1], table[:, -1]

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.train
    write_idx_images(out / "train-images-idx3-ubyte", images[:n])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[:n])
    write_idx_images(out / "t10k-images-idx3-ubyte", images[n:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[n:])
    print(f"wrote {n} train / {len(labels) - n} test samples to {out}")


if __name__ == "__main__":
    main()
