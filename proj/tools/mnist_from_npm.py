#!/usr/bin/env python3
"""Convert the digits bundled in the `mnist` npm package into gzipped IDX files.

The npm package ships 10,000 MNIST digits as JSON arrays of intensities k/255
rounded to three decimals. Adjacent byte levels are 1/255 apart, so
round(v * 255) recovers the original byte exactly.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist
"""

import argparse
import gzip
import json
import pathlib
import struct

PIXELS = 28 * 28


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    args = ap.parse_args()

    images = bytearray()
    labels = bytearray()
    for digit in range(10):
        values = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        if len(values) % PIXELS:
            raise SystemExit(f"{digit}.json: {len(values)} values is not a multiple of {PIXELS}")
        for v in values:
            b = round(v * 255)
            if abs(b / 255 - v) > 6e-4:
                raise SystemExit(f"{digit}.json: value {v} is not a rounded byte level")
            images.append(b)
        labels.extend([digit] * (len(values) // PIXELS))

    n = len(labels)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archives byte-identical across runs.
    with open(args.out_dir / "npm10k-images-idx3-ubyte.gz", "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
            f.write(images)
    with open(args.out_dir / "npm10k-labels-idx1-ubyte.gz", "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x00000801, n))
            f.write(labels)
    print(f"wrote {n} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
