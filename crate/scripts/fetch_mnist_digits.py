#!/usr/bin/env python3
"""Build gzipped IDX files from the 10,000 MNIST digits bundled in the npm
`mnist` package (https://github.com/cazala/mnist).

Usage: scripts/fetch_mnist_digits.py [OUT_DIR]   (default: data/mnist)

The package stores each digit class as JSON float pixels rounded to three
decimals; multiplying by 255 and rounding recovers the original bytes.
Samples are interleaved round-robin across classes so that any prefix is
roughly class-balanced.
"""
import gzip
import io
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist")
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True)
        tgz = next(f for f in os.listdir(tmp) if f.endswith(".tgz"))
        per_class = []
        with tarfile.open(os.path.join(tmp, tgz)) as tar:
            for digit in range(10):
                member = tar.extractfile(f"package/src/digits/{digit}.json")
                raw = json.load(io.TextIOWrapper(member))["data"]
                assert len(raw) % 784 == 0
                per_class.append([raw[i:i + 784] for i in range(0, len(raw), 784)])

    images, labels = [], []
    longest = max(len(c) for c in per_class)
    for k in range(longest):
        for digit, samples in enumerate(per_class):
            if k < len(samples):
                images.append(bytes(min(255, max(0, round(v * 255))) for v in samples[k]))
                labels.append(digit)

    n = len(labels)
    with gzip.GzipFile(os.path.join(out_dir, "digits-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(img)
    with gzip.GzipFile(os.path.join(out_dir, "digits-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))
    print(f"wrote {n} digits to {out_dir}")


if __name__ == "__main__":
    main()
