"""Command-line entry point: ``dmts <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 missing checkpoint or
mismatched state, 4 data error, 5 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import data as datamod
from .analysis import MODES, cross_scale_correlation, export_matrix, representation_dump
from .errors import DataError, DivergenceError, ParameterError, StateError
from .model import DisMSTS
from .training import (
    LAMBDA_GRID,
    S_GRID,
    TrainConfig,
    config_from_flat,
    config_to_flat,
    evaluate,
    prepare_dataset,
    run_ablation,
    train,
    write_json,
)

log = logging.getLogger("dismsts")

EXIT_OK, EXIT_USAGE, EXIT_STATE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4, 5
MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


# -- config resolution ----------------------------------------------------------


def parse_overrides(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_config(config_path=None, overrides: list[str] | None = None,
                   env: dict | None = None) -> TrainConfig:
    """Defaults < DMTS_SEED (seed only) < config file < --set flags."""
    env = os.environ if env is None else env
    flat: dict = {}
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: not valid JSON ({exc})") from exc
        # a run manifest can stand in for a config file
        flat.update(loaded.get("config", loaded))
    set_flags = parse_overrides(overrides)
    if "seed" not in flat and "seed" not in set_flags and env.get("DMTS_SEED"):
        flat["seed"] = env["DMTS_SEED"]
    flat.update(set_flags)
    return config_from_flat(flat)


def config_hash(flat: dict) -> str:
    return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()


def run_manifest(cfg: TrainConfig, data_dir, out_dir: Path, command: str) -> dict:
    flat = config_to_flat(cfg)
    return {
        "command": command,
        "config": flat,
        "config_hash": config_hash(flat),
        "seed": cfg.seed,
        "data": str(Path(data_dir).resolve()),
        "version": __version__,
        "paths": {
            "log": "log.jsonl",
            "timing": "timing.jsonl",
            "best_checkpoint": "best.ckpt",
            "final_checkpoint": "final.ckpt",
            "report": "report.json",
        },
    }


def load_dataset(path, cfg: TrainConfig):
    try:
        return prepare_dataset(datamod.load(path), cfg.normalize)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {exc.filename or path}") from exc


# -- commands ----------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    spec = datamod.SynthSpec(n_vars=args.n, length=args.t, n_classes=args.classes,
                             per_class=args.per_class, seed=args.seed, noise=args.noise,
                             max_depth=args.max_depth, labels=args.labels,
                             burst_length=args.burst_length)
    ds = datamod.generate_synthetic(spec)
    path = datamod.save(ds, args.out)
    counts = " ".join(f"{k}={len(v)}" for k, v in ds.splits.items())
    print(f"N={spec.n_vars} T={spec.length} K={spec.n_classes} {counts} seed={spec.seed} -> {path}")
    return EXIT_OK


def _train_one(cfg: TrainConfig, dataset, out: Path, data_dir, command: str) -> dict:
    manifest = run_manifest(cfg, data_dir, out, command)
    write_json(out / MANIFEST_NAME, manifest)
    res = train(cfg, dataset, out)
    best = res.best_model()
    report = {"best_epoch": res.best_epoch,
              "val": evaluate(best, dataset["val"]).as_dict(),
              "test": evaluate(best, dataset["test"]).as_dict()}
    write_json(out / "report.json", report)
    return report


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set)
    if args.ablation:
        cfg = replace(cfg, ablation=args.ablation)
    if args.print_defaults:
        print(json.dumps(config_to_flat(cfg), indent=2, sort_keys=True))
        return EXIT_OK
    if not args.data or not args.out:
        raise UsageError("train needs --data and --out")
    if cfg.ablation != "full":
        return _ablate(cfg, args)
    dataset = load_dataset(args.data, cfg)
    out = Path(args.out)
    report = _train_one(cfg, dataset, out, args.data, "train")
    t = report["test"]
    print(f"best epoch {report['best_epoch']}: test acc {t['accuracy']:.4f} "
          f"f1 {t['macro_f1']:.4f} mcc {t['mcc']:.4f} -> {out}")
    return EXIT_OK


def _ablate(cfg: TrainConfig, args) -> int:
    if cfg.ablation == "full":
        raise UsageError("ablate needs --ablation no-lmp or swf-mean")
    dataset = load_dataset(args.data, cfg)
    out = Path(args.out)
    for name, c in (("full", replace(cfg, ablation="full")), (cfg.ablation, cfg)):
        write_json(out / name / MANIFEST_NAME, run_manifest(c, args.data, out / name, "ablate"))
    res = run_ablation(cfg, dataset, cfg.ablation, out)
    summary = res.summary()
    write_json(out / "ablation.json", summary)
    for name, m in summary.items():
        print(f"{name:10s} acc {m['accuracy']:.4f} f1 {m['macro_f1']:.4f} mcc {m['mcc']:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if not args.data or not args.out:
        raise UsageError("ablate needs --data and --out")
    cfg = replace(resolve_config(args.config, args.set), ablation=args.ablation)
    return _ablate(cfg, args)


def _model_from_run(args):
    """(model, config, data path) from --run or --checkpoint/--config."""
    if args.run:
        run = Path(args.run)
        mpath = run / MANIFEST_NAME
        if not mpath.exists():
            raise StateError(f"no {MANIFEST_NAME} in {run}")
        manifest = json.loads(mpath.read_text())
        cfg = config_from_flat(manifest["config"])
        ckpt = Path(args.checkpoint) if args.checkpoint else run / ("final.ckpt" if args.final else "best.ckpt")
        data_dir = args.data or manifest["data"]
    else:
        if not args.checkpoint:
            raise UsageError("give --run, or --checkpoint with --config")
        cfg = resolve_config(args.config, args.set)
        ckpt = Path(args.checkpoint)
        data_dir = args.data
    if not data_dir:
        raise UsageError("no dataset: pass --data")
    if not ckpt.exists():
        raise StateError(f"checkpoint not found: {ckpt}")
    dataset = load_dataset(data_dir, cfg)
    model = DisMSTS(cfg.model_config(dataset.n_vars, dataset.length, dataset.n_classes))
    model.load(ckpt)
    return model, cfg, dataset


def cmd_eval(args) -> int:
    model, _, dataset = _model_from_run(args)
    if args.split not in dataset.splits:
        raise DataError(f"dataset has no {args.split!r} split")
    rep = evaluate(model, dataset[args.split])
    print(f"{'split':8s}{'ACC':>9s}{'F1':>9s}{'MCC':>9s}")
    print(f"{args.split:8s}{rep.accuracy:9.4f}{rep.macro_f1:9.4f}{rep.mcc:9.4f}")
    if args.out:
        write_json(args.out, rep.as_dict())
    return EXIT_OK


def cmd_analyze(args) -> int:
    model, _, dataset = _model_from_run(args)
    split = dataset[args.split]
    out = Path(args.out)
    modes = MODES if args.mode == "all" else (args.mode,)
    if model.config.variant == "swf-mean":
        modes = tuple(m for m in modes if m == "raw")
        if not modes:
            raise UsageError("swf-mean models only have raw representations")
    for mode in modes:
        M = cross_scale_correlation(model, split.values, mode, args.measure)
        export_matrix(M, out / f"corr_{mode}.txt")
        print(f"{mode:9s} mean off-diagonal {M.mean_off_diagonal():+.4f} "
              f"(|.| {M.mean_off_diagonal(absolute=True):.4f})")
    if args.dump:
        representation_dump(model, split.values, split.labels, out / "representations.bin")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.data or not args.out:
        raise UsageError("sweep needs --data and --out")
    base = resolve_config(args.config, args.set)
    grid = {"s": [("S", v) for v in S_GRID],
            "lambda": [(("lambda1", "lambda2"), v) for v in LAMBDA_GRID],
            "lambda1": [("lambda1", v) for v in LAMBDA_GRID],
            "lambda2": [("lambda2", v) for v in LAMBDA_GRID]}[args.grid]
    if args.values:
        cast = int if args.grid == "s" else float
        wanted = [cast(v) for v in args.values.split(",")]
        grid = [(k, v) for k, v in grid if v in wanted]
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = datamod.load(args.data)
    rows = []
    (out / "sweep.jsonl").write_text("")
    for keys, value in grid:
        keys = keys if isinstance(keys, tuple) else (keys,)
        cell = {"grid": args.grid, "value": value, "seeds": seeds}
        scores = []
        try:
            for seed in seeds:
                cfg = replace(base, seed=seed, **{k: value for k in keys})
                dataset = prepare_dataset(raw, cfg.normalize)
                report = _train_one(cfg, dataset, out / f"{args.grid}={value}" / f"seed{seed}",
                                    args.data, "sweep")
                scores.append([report["test"][m] for m in ("accuracy", "macro_f1", "mcc")])
        except ParameterError as exc:   # e.g. S deeper than the series allows
            cell["error"] = str(exc)
        if scores:
            arr = np.asarray(scores)
            for i, m in enumerate(("accuracy", "macro_f1", "mcc")):
                cell[m] = float(arr[:, i].mean())
                cell[f"{m}_std"] = float(arr[:, i].std())
        rows.append(cell)
        with open(out / "sweep.jsonl", "a") as fh:
            fh.write(json.dumps(cell, sort_keys=True) + "\n")
        if "error" in cell:
            print(f"{args.grid}={value}: skipped ({cell['error']})")
        else:
            print(f"{args.grid}={value}: acc {cell['accuracy']:.4f}±{cell['accuracy_std']:.4f} "
                  f"f1 {cell['macro_f1']:.4f} mcc {cell['mcc']:.4f}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def _config_flags(p):
    p.add_argument("--config", help="JSON file with flat config keys (or a run manifest)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def _model_source_flags(p):
    p.add_argument("--run", help="run directory written by train")
    p.add_argument("--checkpoint", help="checkpoint file (with --config when no --run)")
    p.add_argument("--final", action="store_true", help="use final.ckpt instead of best.ckpt")
    p.add_argument("--data", help="dataset directory (defaults to the run's dataset)")
    p.add_argument("--split", default="test", choices=datamod.SPLITS)
    _config_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmts", description="Disentangled multi-scale time series classification.")
    parser.add_argument("--version", action="version", version=f"dmts {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write the planted shared/specific dataset")
    g.add_argument("--n", type=int, default=4, help="variables")
    g.add_argument("--t", type=int, default=128, help="series length")
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--per-class", type=int, default=200)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--max-depth", type=int, default=3)
    g.add_argument("--labels", default="both", choices=["both", "trend", "burst"])
    g.add_argument("--burst-length", type=int, default=16)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--ablation", choices=["full", "no-lmp", "swf-mean"])
    t.add_argument("--print-defaults", action="store_true")
    _config_flags(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train full and one ablation variant with the same seed")
    a.add_argument("--data")
    a.add_argument("--out")
    a.add_argument("--ablation", default="swf-mean", choices=["no-lmp", "swf-mean"])
    _config_flags(a)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _model_source_flags(e)
    e.add_argument("--out", help="write the metrics report here (JSON)")
    e.set_defaults(func=cmd_eval)

    z = sub.add_parser("analyze", help="cross-scale correlation matrices and representation dumps")
    _model_source_flags(z)
    z.add_argument("--mode", default="all", choices=list(MODES) + ["all"])
    z.add_argument("--measure", default="cosine", choices=["cosine", "pearson"])
    z.add_argument("--dump", action="store_true", help="also write representations.bin")
    z.add_argument("--out", required=True)
    z.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="sequential grid over S or the loss weights")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--grid", default="s", choices=["s", "lambda", "lambda1", "lambda2"])
    s.add_argument("--values", help="comma-separated subset of the grid")
    s.add_argument("--seeds", default="0")
    _config_flags(s)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "seed", "unset") is None:
        args.seed = int(os.environ.get("DMTS_SEED", 0))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dmts: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"dmts: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except StateError as exc:
        print(f"dmts: {exc}", file=sys.stderr)
        return EXIT_STATE
    except DataError as exc:
        print(f"dmts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ParameterError as exc:
        print(f"dmts: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
