#!/usr/bin/env python3
"""Rebuild the desk-scale MNIST IDX files from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships 10,000 MNIST
digits as per-class JSON arrays of pixel/255 rounded to three decimals. That
rounding is exactly invertible, so the original bytes are recovered here and
written as gzip-wrapped IDX files:

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package data/mnist-desk
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_COUNT = 8000
SHUFFLE_SEED = 20200101


def load(package_dir):
    samples = []
    for digit in range(10):
        raw = json.loads((Path(package_dir) / "src" / "digits" / f"{digit}.json").read_text())["data"]
        pixels = [int(round(v * 255)) for v in raw]
        for v, b in zip(raw, pixels):
            if round(b / 255, 3) != round(v, 3):
                raise SystemExit(f"pixel {v} does not map back to a byte")
        for i in range(len(pixels) // 784):
            samples.append((bytes(pixels[i * 784:(i + 1) * 784]), digit))
    return samples


def write_idx(path, samples):
    with gzip.GzipFile(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for img, _ in samples:
            f.write(img)
    with gzip.GzipFile(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    samples = load(sys.argv[1])
    random.Random(SHUFFLE_SEED).shuffle(samples)
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train", samples[:TRAIN_COUNT])
    write_idx(out / "t10k", samples[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} train / {len(samples) - TRAIN_COUNT} test samples to {out}")


if __name__ == "__main__":
    main()
