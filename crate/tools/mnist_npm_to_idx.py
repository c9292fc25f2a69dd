#!/usr/bin/env python3
"""Repackage the digits bundled with the `mnist` npm package (v1.1.0) as an IDX3 file.

Usage: mnist_npm_to_idx.py <package/src/digits dir> <out file> [per_digit]

Digits are interleaved round-robin (0,1,...,9,0,1,...) and quantized back to
u8 with round(v * 255).
"""
import json
import struct
import sys


def main():
    src, out = sys.argv[1], sys.argv[2]
    per_digit = int(sys.argv[3]) if len(sys.argv) > 3 else 200
    digits = []
    for d in range(10):
        with open(f"{src}/{d}.json") as f:
            data = json.load(f)["data"]
        digits.append([data[i * 784:(i + 1) * 784] for i in range(len(data) // 784)])
    images = [digits[d][i] for i in range(per_digit) for d in range(10)]
    with open(out, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(max(0, min(255, round(v * 255))) for v in img))


if __name__ == "__main__":
    main()
