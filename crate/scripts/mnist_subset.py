"""Rebuild data/mnist-subset/ from the `mnist` npm package (MIT, Juan Cazala).

The package ships 10,000 MNIST digits as JSON arrays of pixel/255 values
rounded to three decimals; multiplying by 255 recovers the original bytes.
Each digit is split 80/20 into train/test, then samples are shuffled with a
fixed seed and written as gzipped big-endian IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def idx_images(images):
    head = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    return head + b"".join(bytes(img) for img in images)


def idx_labels(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


def write_gz(path, payload):
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
            gz.write(payload)


def main(pkg, out):
    pkg, out = Path(pkg), Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        values = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        count = len(values) // 784
        samples = []
        for i in range(count):
            chunk = values[i * 784:(i + 1) * 784]
            samples.append([int(round(v * 255)) for v in chunk])
        cut = (count * 4) // 5
        train += [(s, digit) for s in samples[:cut]]
        test += [(s, digit) for s in samples[cut:]]
    rng = random.Random(0)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, rows in (("train", train), ("t10k", test)):
        write_gz(out / f"{name}-images-idx3-ubyte.gz", idx_images([s for s, _ in rows]))
        write_gz(out / f"{name}-labels-idx1-ubyte.gz", idx_labels([l for _, l in rows]))
        print(name, len(rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
