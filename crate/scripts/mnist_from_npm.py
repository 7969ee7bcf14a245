#!/usr/bin/env python3
"""Convert the digits bundled in the `mnist` npm package into an IDX3 image file.

Usage: scripts/mnist_from_npm.py <unpacked npm package dir> <output idx3 path>

Obtain the package with `npm pack mnist && tar xzf mnist-*.tgz`. The package
stores roughly 1000 samples per class as floats in [0, 1]; records are
interleaved by class (0, 1, ..., 9, 0, 1, ...) so that every prefix of the
output is class balanced.
"""
import json
import struct
import sys
from pathlib import Path

SIZE = 28 * 28


def main() -> None:
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    per_class = []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        per_class.append([data[i:i + SIZE] for i in range(0, len(data) - SIZE + 1, SIZE)])
    count = min(len(c) for c in per_class)
    images = [per_class[d][i] for i in range(count) for d in range(10)]
    with out.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(max(0, min(255, round(v * 255))) for v in img))
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main()
