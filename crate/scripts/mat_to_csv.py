#!/usr/bin/env python3
"""Convert an ODDS .mat anomaly benchmark (X, y) to the CSV layout the
dataset manifests expect: numeric feature columns then a `label` column
with 1 = anomaly.

Usage: mat_to_csv.py thyroid.mat data/thyroid.csv
"""
import csv
import sys

import scipy.io


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    mat = scipy.io.loadmat(sys.argv[1])
    x, y = mat["X"], mat["y"].ravel().astype(int)
    with open(sys.argv[2], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"f{i}" for i in range(x.shape[1])] + ["label"])
        for row, label in zip(x, y):
            w.writerow([repr(float(v)) for v in row] + [label])
    print(f"wrote {x.shape[0]} rows x {x.shape[1]} features")


if __name__ == "__main__":
    main()
