#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package into IDX files.

The package ships ~10k MNIST digits as per-class JSON arrays of
pixel/255 values rounded to three decimals. This script restores u8
pixels, shuffles with a fixed seed and writes an 8000/remainder
train/test split using the standard MNIST IDX file names.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import json
import os
import random
import struct
import sys

TRAIN = 8000


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = sys.argv[1], sys.argv[2]
    samples = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = json.load(f)["data"]
        assert len(raw) % 784 == 0
        for i in range(len(raw) // 784):
            px = [max(0, min(255, round(v * 255))) for v in raw[i * 784:(i + 1) * 784]]
            samples.append((px, digit))
    random.Random(20180101).shuffle(samples)
    os.makedirs(dst, exist_ok=True)
    train, test = samples[:TRAIN], samples[TRAIN:]
    write_images(os.path.join(dst, "train-images-idx3-ubyte"), [s[0] for s in train])
    write_labels(os.path.join(dst, "train-labels-idx1-ubyte"), [s[1] for s in train])
    write_images(os.path.join(dst, "t10k-images-idx3-ubyte"), [s[0] for s in test])
    write_labels(os.path.join(dst, "t10k-labels-idx1-ubyte"), [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {dst}")


if __name__ == "__main__":
    main()
