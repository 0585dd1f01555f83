#!/usr/bin/env python3
"""Write a small MNIST subset in IDX format.

The 5000-image MNIST sample bundled with the mlxtend wheel (500 images per
digit) is split into a 4000-image "train" file and a 1000-image "test" file,
balanced per class. Only the standard library is used; the wheel is fetched
with `pip download mlxtend --no-deps` when not given explicitly.
"""
import argparse
import glob
import gzip
import os
import struct
import subprocess
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(path):
    if path:
        return path
    tmp = tempfile.mkdtemp()
    subprocess.run(
        ["pip", "download", "mlxtend", "--no-deps", "-q", "-d", tmp], check=True
    )
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def write_idx(prefix, rows):
    images = bytearray(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
    labels = bytearray(struct.pack(">II", 0x00000801, len(rows)))
    for pixels, label in rows:
        images.extend(pixels)
        labels.append(label)
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(images)
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", help="path to an mlxtend wheel")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    raw = zipfile.ZipFile(find_wheel(args.wheel)).read(MEMBER)
    by_class = {d: [] for d in range(10)}
    for line in gzip.decompress(raw).decode().splitlines():
        fields = [int(float(x)) for x in line.split(",")]
        by_class[fields[-1]].append((bytes(fields[:-1]), fields[-1]))

    train, test = [], []
    for digit in range(10):
        rows = by_class[digit]
        test.extend(rows[: args.test_per_class])
        train.extend(rows[args.test_per_class :])
    os.makedirs(args.out, exist_ok=True)
    write_idx(os.path.join(args.out, "train"), interleave(train))
    write_idx(os.path.join(args.out, "t10k"), interleave(test))


def interleave(rows):
    buckets = {d: [r for r in rows if r[1] == d] for d in range(10)}
    out = []
    for i in range(max(len(b) for b in buckets.values())):
        for d in range(10):
            if i < len(buckets[d]):
                out.append(buckets[d][i])
    return out


if __name__ == "__main__":
    main()
