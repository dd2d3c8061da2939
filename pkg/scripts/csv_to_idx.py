"""Convert a ``pixels..., label`` CSV (one 28x28 image per row) to IDX files.

Writes train-/t10k- image and label files so the result can be passed to
``--data-dir``. ``--n-test`` rows, drawn per class with a fixed seed, become
the test split; both splits keep the CSV's row order otherwise.

    python scripts/csv_to_idx.py digits.csv.gz out_dir --n-test 1000
"""

import argparse
from pathlib import Path

import numpy as np

from cnnma.mnist_io import ImageSet, LabelSet, serialize_images, serialize_labels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("out_dir")
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--side", type=int, default=28)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    table = np.loadtxt(args.csv, delimiter=",", dtype=np.int64)
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, args.side, args.side)
    labels = table[:, -1].astype(np.uint8)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    is_test = np.zeros(labels.shape[0], dtype=bool)
    classes = np.unique(labels)
    for c in classes:
        idx = np.flatnonzero(labels == c)
        is_test[rng.choice(idx, args.n_test // classes.size, replace=False)] = True
    splits = {"t10k": is_test, "train": ~is_test}
    for stem, sl in splits.items():
        (out / f"{stem}-images-idx3-ubyte").write_bytes(serialize_images(ImageSet(pixels[sl])))
        (out / f"{stem}-labels-idx1-ubyte").write_bytes(serialize_labels(LabelSet(labels[sl])))
        print(f"{stem}: {pixels[sl].shape[0]} samples")


if __name__ == "__main__":
    main()
