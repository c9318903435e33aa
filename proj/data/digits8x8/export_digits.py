#!/usr/bin/env python3
"""Export the scikit-learn 8x8 handwritten digits to IDX files.

Writes train/test image+label pairs in the big-endian IDX format
(magic 2051 for images, 2049 for labels). Pixel intensities 0..16 are
rescaled to 0..255 bytes. The split is a fixed seeded shuffle so the
files are reproducible.
"""

import struct

import numpy as np
from sklearn.datasets import load_digits


def write_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as out:
        out.write(struct.pack(">IIII", 2051, n, rows, cols))
        out.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as out:
        out.write(struct.pack(">II", 2049, len(labels)))
        out.write(labels.astype(np.uint8).tobytes())


def main():
    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target

    rng = np.random.RandomState(20240601)
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]

    n_train = 1500
    write_images("train-images-idx3-ubyte", images[:n_train])
    write_labels("train-labels-idx1-ubyte", labels[:n_train])
    write_images("test-images-idx3-ubyte", images[n_train:])
    write_labels("test-labels-idx1-ubyte", labels[n_train:])
    print(f"wrote {n_train} train / {len(labels) - n_train} test examples")


if __name__ == "__main__":
    main()
