#!/usr/bin/env python3
"""Build the desk-scale MNIST subset used by the acceptance suite.

The source is the `mnist` npm package (MIT), which ships 10,000 MNIST digits
as per-class JSON arrays of pixel intensities rounded to three decimals.
Each intensity is mapped back to its byte value and the digits are written as
big-endian IDX files: 500 training and 100 validation images per class,
disjoint, in a seeded interleaved order.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 500
VAL_PER_CLASS = 100
SIDE = 28


def load_digits(src: Path):
    digits = {}
    for label in range(10):
        flat = json.loads((src / f"{label}.json").read_text())["data"]
        count = len(flat) // (SIDE * SIDE)
        images = []
        for i in range(count):
            chunk = flat[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in chunk))
        digits[label] = images
    return digits


def write_idx(images, labels, image_path: Path, label_path: Path):
    with image_path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with label_path.open("wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    digits = load_digits(src)
    train, val = [], []
    for label, images in digits.items():
        train += [(img, label) for img in images[:TRAIN_PER_CLASS]]
        val += [(img, label)
                for img in images[TRAIN_PER_CLASS:TRAIN_PER_CLASS + VAL_PER_CLASS]]
    rng = random.Random(20221102)
    rng.shuffle(train)
    rng.shuffle(val)
    write_idx([i for i, _ in train], [l for _, l in train],
              dst / "train-images-idx3-ubyte", dst / "train-labels-idx1-ubyte")
    write_idx([i for i, _ in val], [l for _, l in val],
              dst / "val-images-idx3-ubyte", dst / "val-labels-idx1-ubyte")


if __name__ == "__main__":
    main()
