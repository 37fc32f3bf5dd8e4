"""Rebuild IDX files from the digit JSON shipped in the npm ``mnist`` package.

The package carries 10,000 MNIST digits as 784 floats in [0, 1] rounded to
three decimals.  This script restores uint8 pixels, shuffles with a fixed
seed and writes a train/test split in IDX format.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/mnist_from_npm.py package/src/digits /root/data/mnist --test 2000
"""
import argparse
import json
import os
import struct

import numpy as np


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for d in range(10):
        with open(os.path.join(args.digits_dir, f"{d}.json")) as f:
            data = np.asarray(json.load(f)["data"], dtype=np.float64)
        pix = np.clip(np.rint(data.reshape(-1, 784) * 255.0), 0, 255)
        images.append(pix)
        labels.append(np.full(len(pix), d))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    perm = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[perm], labels[perm]

    os.makedirs(args.out_dir, exist_ok=True)
    n_test = args.test
    write_idx_images(os.path.join(args.out_dir, "train-images-idx3-ubyte"), images[n_test:])
    write_idx_labels(os.path.join(args.out_dir, "train-labels-idx1-ubyte"), labels[n_test:])
    write_idx_images(os.path.join(args.out_dir, "t10k-images-idx3-ubyte"), images[:n_test])
    write_idx_labels(os.path.join(args.out_dir, "t10k-labels-idx1-ubyte"), labels[:n_test])
    print(f"wrote {len(labels) - n_test} train / {n_test} test to {args.out_dir}")


if __name__ == "__main__":
    main()
