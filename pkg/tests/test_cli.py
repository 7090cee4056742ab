import json

import numpy as np
import pytest

from dismsts import cli
from dismsts.checkpoint import load_checkpoint
from dismsts.model import DisMSTS
from dismsts.training import TrainConfig

SMALL = ["--n", "2", "--t", "32", "--classes", "3", "--per-class", "20", "--burst-length", "4",
         "--max-depth", "2"]
FAST = ["--set", "s=2", "--set", "epochs=2", "--set", "batch_size=16", "--set", "model.channels=4",
        "--set", "model.hidden=4"]


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "synth"
    assert cli.main(["gen-synth", *SMALL, "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run(synth, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "r"
    assert cli.main(["train", "--data", str(synth), "--out", str(out), *FAST]) == 0
    return out


def test_gen_synth_deterministic(synth, tmp_path, capsys):
    assert cli.main(["gen-synth", *SMALL, "--seed", "7", "--out", str(tmp_path / "again")]) == 0
    assert "N=2 T=32 K=3" in capsys.readouterr().out
    for f in ("manifest.json", "train.bin", "val.bin", "test.bin"):
        assert (tmp_path / "again" / f).read_bytes() == (synth / f).read_bytes()


def test_gen_synth_missing_out():
    with pytest.raises(SystemExit) as info:
        cli.main(["gen-synth"])
    assert info.value.code == 2


def test_gen_synth_bad_spec(tmp_path):
    assert cli.main(["gen-synth", "--t", "4", "--out", str(tmp_path / "x")]) == 2


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("DMTS_SEED", "7")
    cli.main(["gen-synth", *SMALL, "--out", str(tmp_path / "a")])
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["synthetic"]["seed"] == 7
    cli.main(["gen-synth", *SMALL, "--seed", "3", "--out", str(tmp_path / "b")])
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["synthetic"]["seed"] == 3
    assert cli.resolve_config(env={"DMTS_SEED": "9"}).seed == 9
    assert cli.resolve_config(overrides=["seed=2"], env={"DMTS_SEED": "9"}).seed == 2


def test_print_defaults(capsys):
    assert cli.main(["train", "--print-defaults"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert (d["batch_size"], d["epochs"], d["lr"]) == (256, 100, 5e-3)


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"s": 1, "lambda1": 0.5, "epochs": 3}))
    c = cli.resolve_config(cfg, ["s=3", "lambda1=0.05", "lambda2=0.05"], env={})
    assert (c.S, c.lambda1, c.lambda2, c.epochs) == (3, 0.05, 0.05, 3)


def test_config_hash_ignores_key_order():
    a = {"s": 3, "lr": 0.1}
    assert cli.config_hash(a) == cli.config_hash(dict(reversed(list(a.items()))))


def test_bad_override_and_unknown_key(synth, tmp_path):
    assert cli.main(["train", "--data", str(synth), "--out", str(tmp_path), "--set", "novalue"]) == 2
    assert cli.main(["train", "--data", str(synth), "--out", str(tmp_path), "--set", "bogus=1"]) == 2


def test_train_artifacts_and_manifest(run):
    names = {p.name for p in run.iterdir()}
    assert {"run_manifest.json", "log.jsonl", "timing.jsonl", "best.ckpt", "final.ckpt", "report.json"} <= names
    m = json.loads((run / "run_manifest.json").read_text())
    assert m["config"]["s"] == 2 and m["config_hash"] == cli.config_hash(m["config"])


def test_run_reconstructible_from_manifest(run, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["train", "--config", str(run / "run_manifest.json"), "--data",
                     json.loads((run / "run_manifest.json").read_text())["data"], "--out", str(again)]) == 0
    assert (again / "final.ckpt").read_bytes() == (run / "final.ckpt").read_bytes()
    assert (again / "log.jsonl").read_bytes() == (run / "log.jsonl").read_bytes()


def test_depth_error_echoes_max(synth, tmp_path, capsys):
    assert cli.main(["train", "--data", str(synth), "--out", str(tmp_path), "--set", "s=9"]) == 2
    assert "maximum feasible S is 5" in capsys.readouterr().err


def test_eval_run(run, tmp_path, capsys):
    assert cli.main(["eval", "--run", str(run), "--out", str(tmp_path / "rep.json")]) == 0
    assert "ACC" in capsys.readouterr().out
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert sum(map(sum, rep["confusion"])) == 12


def test_eval_missing_checkpoint(run, tmp_path):
    assert cli.main(["eval", "--run", str(tmp_path)]) == 3
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(run)]) == 3


def test_eval_mismatched_checkpoint(run, synth, tmp_path):
    assert cli.main(["eval", "--checkpoint", str(run / "best.ckpt"), "--data", str(synth), *FAST,
                     "--set", "ablation=no-lmp"]) == 3


def test_eval_corrupt_data(run, synth, tmp_path):
    import shutil
    bad = tmp_path / "bad"
    shutil.copytree(synth, bad)
    (bad / "test.bin").write_bytes((bad / "test.bin").read_bytes()[:-3])
    assert cli.main(["eval", "--run", str(run), "--data", str(bad)]) == 4


def test_untrained_checkpoint_is_near_chance(tmp_path, capsys):
    data = tmp_path / "d"
    cli.main(["gen-synth", "--per-class", "100", "--seed", "1", "--out", str(data)])
    cfg = TrainConfig()
    m = DisMSTS(cfg.model_config(4, 128, 3), seed=11)
    m.save(tmp_path / "rand.ckpt")
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "rand.ckpt"), "--data", str(data)]) == 0
    acc = float(capsys.readouterr().out.splitlines()[-1].split()[1])
    assert abs(acc - 1 / 3) <= 0.1


def test_analyze(run, tmp_path):
    assert cli.main(["analyze", "--run", str(run), "--out", str(tmp_path), "--dump"]) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"corr_raw.txt", "corr_shared.txt", "corr_specific.txt",
                                                     "representations.bin"}


def test_ablate_and_alias(synth, tmp_path, capsys):
    assert cli.main(["train", "--data", str(synth), "--out", str(tmp_path / "a"), *FAST,
                     "--ablation", "swf-mean"]) == 0
    assert cli.main(["ablate", "--data", str(synth), "--out", str(tmp_path / "b"), *FAST]) == 0
    a = json.loads((tmp_path / "a" / "ablation.json").read_text())
    b = json.loads((tmp_path / "b" / "ablation.json").read_text())
    assert a == b and set(a) == {"full", "swf-mean"}
    assert (tmp_path / "a" / "swf-mean" / "run_manifest.json").exists()


def test_sweep_rows(synth, tmp_path, capsys):
    assert cli.main(["sweep", "--data", str(synth), "--out", str(tmp_path), "--grid", "s",
                     "--values", "0,1,6", "--seeds", "0,1", *FAST]) == 0
    rows = [json.loads(l) for l in (tmp_path / "sweep.jsonl").read_text().splitlines()]
    assert [r["value"] for r in rows] == [0, 1, 6]
    assert "accuracy" in rows[0] and rows[0]["seeds"] == [0, 1]
    assert "error" in rows[2]    # T=32 supports at most S=5


def test_sweep_lambda_grid(synth, tmp_path):
    assert cli.main(["sweep", "--data", str(synth), "--out", str(tmp_path), "--grid", "lambda",
                     "--values", "0.001,1.0", *FAST]) == 0
    rows = [json.loads(l) for l in (tmp_path / "sweep.jsonl").read_text().splitlines()]
    assert [r["value"] for r in rows] == [0.001, 1.0]
    m = json.loads((tmp_path / "lambda=1.0" / "seed0" / "run_manifest.json").read_text())
    assert m["config"]["lambda1"] == m["config"]["lambda2"] == 1.0
