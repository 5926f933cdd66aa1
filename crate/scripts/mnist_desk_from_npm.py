#!/usr/bin/env python3
"""Build the MNIST-desk IDX files from the `mnist` npm package.

The package ships 10,000 MNIST digits as per-class JSON arrays of
[0,1] floats (three decimals). This writes them back out as standard
IDX files (0x00000803 images, 0x00000801 labels), class-major order.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_desk_from_npm.py package/src/digits data/mnist-desk
"""
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    pixels = bytearray()
    labels = bytearray()
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        pixels.extend(min(255, max(0, round(v * 255))) for v in data)
        labels.extend([digit] * (len(data) // 784))
    n = len(labels)
    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(pixels)
    with open(dst / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels)
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
