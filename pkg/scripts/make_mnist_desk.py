"""Build the 8k/2k MNIST desk subset as gzipped IDX files.

Source: the 10,000 MNIST digits bundled in the ``mnist`` npm package
(``npm pack mnist``), stored there as per-class JSON arrays of pixel/255
rounded to 3 decimals. Pixels are recovered with round(v * 255).

    python scripts/make_mnist_desk.py mnist-1.1.0.tgz data/mnist-desk
"""

import argparse
import io
import json
import tarfile
from pathlib import Path

import numpy as np

from zootwin.zoo.data import write_idx_images, write_idx_labels


def load_npm_digits(tgz: Path):
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = np.asarray(json.load(io.TextIOWrapper(member))["data"], dtype=np.float64)
            px = np.clip(np.rint(flat * 255.0), 0, 255).astype(np.uint8).reshape(-1, 28, 28)
            images.append(px)
            labels.append(np.full(len(px), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("tgz", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--n-train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    x, y = load_npm_digits(args.tgz)
    order = np.random.default_rng(args.seed).permutation(len(x))
    x, y = x[order], y[order]
    n = args.n_train
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx_images(args.out / "train-images-idx3-ubyte.gz", x[:n])
    write_idx_labels(args.out / "train-labels-idx1-ubyte.gz", y[:n])
    write_idx_images(args.out / "t10k-images-idx3-ubyte.gz", x[n:])
    write_idx_labels(args.out / "t10k-labels-idx1-ubyte.gz", y[n:])
    print(f"wrote {n} train / {len(x) - n} test images to {args.out}")


if __name__ == "__main__":
    main()
