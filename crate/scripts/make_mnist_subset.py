#!/usr/bin/env python3
"""Build the MNIST IDX fixture used by the tests.

Source: the `mnist` npm package (MIT, github.com/cazala/mnist), which ships
about 10k MNIST digits as JSON arrays of intensities in [0, 1].

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset

Writes `images-idx3-ubyte` and `labels-idx1-ubyte` holding 250 digits per
class (2500 total) in a seeded shuffled order.
"""
import json
import random
import struct
import sys
from pathlib import Path

PER_CLASS = 250
SEED = 20180713


def main(src: Path, dst: Path) -> None:
    items = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(PER_CLASS):
            pixels = data[i * 784:(i + 1) * 784]
            items.append((digit, bytes(round(v * 255) for v in pixels)))
    random.Random(SEED).shuffle(items)

    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(items), 28, 28))
        for _, px in items:
            f.write(px)
    with open(dst / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(items)))
        f.write(bytes(label for label, _ in items))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
