#!/usr/bin/env python3
"""Build IDX-format MNIST subset files from the `mnist` npm package.

The package ships 10000 digits as per-class arrays of 784 pixel values in
[0, 1] rounded to three decimals. Each value is mapped back to its byte with
round(v * 255). Classes are interleaved round-robin so every prefix is close
to class-balanced; the first 8000 images become the train file and the
remaining 2000 the t10k file.

usage: make_mnist_subset.py <path/to/mnist.js> <out_dir>
"""
import re
import struct
import sys
from pathlib import Path


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    text = src.read_text()
    arrays = re.findall(r'"data": \[([^\]]*)\]', text)
    if len(arrays) != 10:
        raise SystemExit(f"expected 10 digit arrays, found {len(arrays)}")
    per_class = []
    for digit, body in enumerate(arrays):
        vals = [round(float(v) * 255) for v in body.split(",")]
        if len(vals) % 784:
            raise SystemExit(f"digit {digit}: {len(vals)} values not a multiple of 784")
        per_class.append([bytes(vals[i:i + 784]) for i in range(0, len(vals), 784)])

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[d] < len(per_class[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_class[d]):
                images.append(per_class[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1

    out.mkdir(parents=True, exist_ok=True)
    split = 8000
    for prefix, lo, hi in (("train", 0, split), ("t10k", split, len(images))):
        count = hi - lo
        with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
            f.write(struct.pack(">IIII", 0x803, count, 28, 28))
            for img in images[lo:hi]:
                f.write(img)
        with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
            f.write(struct.pack(">II", 0x801, count))
            f.write(bytes(labels[lo:hi]))
    print(f"wrote {split} train and {len(images) - split} test images to {out}")


if __name__ == "__main__":
    main()
