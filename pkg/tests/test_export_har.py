import runpy
import sys
from pathlib import Path

import numpy as np

from dismsts.data import load

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "export_uci_har.py"


def fake_har(root: Path, rng):
    mod = runpy.run_path(str(SCRIPT))
    for name, n in (("train", 6), ("test", 4)):
        inertial = root / name / "Inertial Signals"
        inertial.mkdir(parents=True)
        for sig in mod["SIGNALS"]:
            np.savetxt(inertial / f"{sig}_{name}.txt", rng.normal(size=(n, 128)))
        np.savetxt(root / name / f"y_{name}.txt", np.arange(n) % 6 + 1, fmt="%d")


def test_export(tmp_path, rng, monkeypatch):
    fake_har(tmp_path / "src", rng)
    monkeypatch.setattr(sys, "argv", ["export", str(tmp_path / "src"), str(tmp_path / "har")])
    runpy.run_path(str(SCRIPT), run_name="__main__")
    ds = load(tmp_path / "har")
    assert (ds.n_vars, ds.length, ds.n_classes) == (9, 128, 6)
    assert len(ds["train"]) == 6 and ds["test"].labels.tolist() == [0, 1, 2, 3]
