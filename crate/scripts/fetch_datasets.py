#!/usr/bin/env python3
"""Fetch SatImage and Pendigits and write them as LIBSVM train/test files.

The raw tables come from the `keel_ds` wheel, which ships the UCI data in
its original row order (training rows first, then test rows). The standard
splits are recovered by row count.
"""
import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

SPLITS = {
    # name: (member inside the wheel, number of training rows)
    "satimage": ("keel_ds/data/balanced/raw/satimage.dat", 4435),
    "pendigits": ("keel_ds/data/balanced/raw/penbased.dat", 7494),
}


def to_libsvm(rows):
    out = []
    for cols in rows:
        label, feats = cols[-1], cols[:-1]
        parts = [label]
        for i, v in enumerate(feats, start=1):
            if float(v) != 0.0:
                parts.append(f"{i}:{v}")
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "keel_ds==0.2.5"]
        )
        wheel = zipfile.ZipFile(glob.glob(os.path.join(tmp, "keel_ds-*.whl"))[0])
        for name, (member, n_train) in SPLITS.items():
            text = wheel.read(member).decode()
            rows = [
                [c.strip() for c in line.split(",")]
                for line in text.splitlines()
                if line.strip() and not line.startswith("@")
            ]
            for split, part in (("train", rows[:n_train]), ("test", rows[n_train:])):
                path = os.path.join(args.out, f"{name}.{split}")
                with open(path, "w") as f:
                    f.write(to_libsvm(part))
                print(f"{path}: {len(part)} rows")


if __name__ == "__main__":
    main()
