"""Convert an already-downloaded copy of the UCI HAR dataset into a DMTS-DATA directory.

    python scripts/export_uci_har.py "/path/to/UCI HAR Dataset" data/har

Uses the nine raw inertial channels (128 steps each) and the official
train/test subject split. No validation split is written; training carves one
out of train. Labels 1..6 become 0..5.
"""

import argparse
from pathlib import Path

import numpy as np

from dismsts.data import DatasetContainer, Split, save

SIGNALS = [f"{kind}_{axis}" for kind in ("body_acc", "body_gyro", "total_acc") for axis in "xyz"]


def read_split(root: Path, name: str) -> Split:
    inertial = root / name / "Inertial Signals"
    values = np.stack([np.loadtxt(inertial / f"{sig}_{name}.txt") for sig in SIGNALS], axis=1)
    labels = np.loadtxt(root / name / f"y_{name}.txt", dtype=np.int64) - 1
    return Split(values=values.astype(np.float64), labels=labels)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path, help="the extracted 'UCI HAR Dataset' directory")
    ap.add_argument("out", type=Path)
    args = ap.parse_args()
    splits = {name: read_split(args.source, name) for name in ("train", "test")}
    manifest = {"name": "uci-har", "n_variables": len(SIGNALS), "length": 128, "n_classes": 6,
                "channels": SIGNALS, "splits": {}, "normalization": None}
    container = DatasetContainer(manifest=manifest, splits=splits)
    container.validate()
    path = save(container, args.out)
    print(f"wrote {path}: train {len(splits['train'])}, test {len(splits['test'])}")


if __name__ == "__main__":
    main()
