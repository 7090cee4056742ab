"""Mini-batch training loop, evaluation and the ablation driver."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .checkpoint import atomic_write_bytes, save_checkpoint
from .data import DatasetContainer, Split, ensure_val_split, normalize
from .errors import ConfigurationError, DivergenceError, InputError, ParameterError
from .metrics import MetricsReport, evaluate_predictions
from .model import VARIANTS, DisMSTS, ModelConfig
from .optim import Adam

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0)
S_GRID = tuple(range(8))


@dataclass(frozen=True)
class TrainConfig:
    S: int = 3
    window: int = 2
    tau: float = 1.0
    lambda1: float = 0.05
    lambda2: float = 0.05
    batch_size: int = 256
    epochs: int = 100
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    channels: int = 16
    kernel: int = 8
    stride: int | None = None
    hidden: int = 32
    head_hidden: int | None = None
    ablation: str = "full"
    normalize: str = "zscore"

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("lambda1 and lambda2 must be non-negative")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if self.ablation not in VARIANTS:
            raise ConfigurationError(f"unknown ablation {self.ablation!r}; choose from {VARIANTS}")

    def model_config(self, n_vars: int, length: int, n_classes: int) -> ModelConfig:
        return ModelConfig(n_vars=n_vars, length=length, n_classes=n_classes, S=self.S,
                           window=self.window, channels=self.channels, kernel=self.kernel,
                           stride=self.stride, hidden=self.hidden, head_hidden=self.head_hidden,
                           tau=self.tau, variant=self.ablation)


# flat config keys (as used in config files and --set) -> TrainConfig field
FLAT_KEYS = {
    "s": "S",
    "window": "window",
    "tau": "tau",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "lr": "lr",
    "seed": "seed",
    "ablation": "ablation",
    "normalize": "normalize",
    "optim.beta1": "beta1",
    "optim.beta2": "beta2",
    "optim.eps": "eps",
    "model.channels": "channels",
    "model.kernel": "kernel",
    "model.stride": "stride",
    "model.hidden": "hidden",
    "model.head_hidden": "head_hidden",
}


def config_to_flat(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    return {k: d[f] for k, f in FLAT_KEYS.items()}


def config_from_flat(flat: dict, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    updates = {}
    for key, value in flat.items():
        if key not in FLAT_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}; known keys: {sorted(FLAT_KEYS)}")
        name = FLAT_KEYS[key]
        updates[name] = _coerce(name, value, types[name])
    return replace(base, **updates)


def _coerce(name: str, value, type_name: str):
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
        if "None" in str(type_name):
            return None
        raise ConfigurationError(f"{name} cannot be empty")
    try:
        if type_name.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if type_name.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value {value!r} for {name}") from exc


@dataclass
class EpochRecord:
    epoch: int
    class_loss: float
    sim_loss: float | None
    dis_loss: float | None
    total: float
    train: dict
    val: dict

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: DisMSTS
    config: TrainConfig
    history: list[EpochRecord]
    best_epoch: int
    best_state: dict[str, np.ndarray]
    final_state: dict[str, np.ndarray]
    wall_times: list[float] = field(default_factory=list)

    def best_model(self) -> DisMSTS:
        m = DisMSTS(self.model.config, seed=0)
        m.load_state_dict(self.best_state)
        return m


def prepare_dataset(dataset: DatasetContainer, mode: str = "zscore") -> DatasetContainer:
    """Give the dataset a validation split and normalize it with train statistics."""
    dataset = ensure_val_split(dataset)
    if (dataset.manifest.get("normalization") or {}).get("mode") == mode:
        return dataset
    return normalize(dataset, mode)


def evaluate(model: DisMSTS, split: Split, batch_size: int = 512) -> MetricsReport:
    if len(split) == 0:
        raise InputError("cannot evaluate on an empty split")
    pred = model.predict(split.values, batch_size)
    return evaluate_predictions(split.labels, pred, model.config.n_classes)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def init_model(config: TrainConfig, n_vars: int, length: int, n_classes: int) -> DisMSTS:
    init_rng, _ = _streams(config.seed)
    return DisMSTS(config.model_config(n_vars, length, n_classes), seed=init_rng)


def train(config: TrainConfig, dataset: DatasetContainer, out_dir=None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train on ``dataset['train']``, select the best epoch on ``dataset['val']``.

    With ``out_dir`` set, writes ``log.jsonl`` (deterministic rows),
    ``timing.jsonl`` (wall clock), ``best.ckpt`` and ``final.ckpt``.
    """
    train_split = dataset["train"]
    val_split = dataset.splits.get("val")
    if len(train_split) == 0:
        raise InputError("training split is empty")
    model = init_model(config, dataset.n_vars, dataset.length, dataset.n_classes)
    _, shuffle_rng = _streams(config.seed)
    opt = Adam(model.params, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)
    regularized = config.ablation != "swf-mean"

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in ("log.jsonl", "timing.jsonl"):
            (out_dir / name).write_text("")

    history: list[EpochRecord] = []
    walls: list[float] = []
    best_acc = -1.0
    best_epoch = 0
    best_state = model.state_dict()
    last_finite = None
    step = 0
    n = len(train_split)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        preds = np.empty(n, dtype=np.int64)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            x, y = train_split.values[idx], train_split.labels[idx]
            breakdown, out = model.loss(x, y, config.lambda1, config.lambda2)
            row = breakdown.as_dict()
            if not np.isfinite(row["total"]):
                raise DivergenceError(f"non-finite loss at step {step} (epoch {epoch}); "
                                      f"last finite breakdown: {last_finite}", step, last_finite)
            last_finite = row
            opt.zero_grad()
            ad.backward(breakdown.total)
            opt.step()
            step += 1
            sums += len(idx) * np.array([row["class_loss"], row["sim_loss"] or 0.0,
                                         row["dis_loss"] or 0.0, row["total"]])
            preds[start:start + len(idx)] = out.logits.data.argmax(axis=1)
        sums /= n
        train_report = evaluate_predictions(train_split.labels[perm], preds, dataset.n_classes)
        val_report = evaluate(model, val_split) if val_split is not None and len(val_split) else None
        rec = EpochRecord(
            epoch=epoch,
            class_loss=float(sums[0]),
            sim_loss=float(sums[1]) if regularized else None,
            dis_loss=float(sums[2]) if regularized else None,
            total=float(sums[3]),
            train=train_report.summary(),
            val=val_report.summary() if val_report else {},
        )
        history.append(rec)
        score = val_report.accuracy if val_report else train_report.accuracy
        if score > best_acc:
            best_acc, best_epoch, best_state = score, epoch, model.state_dict()
            if out_dir is not None:
                save_checkpoint(out_dir / "best.ckpt", best_state)
        walls.append(time.perf_counter() - t0)
        if out_dir is not None:
            with open(out_dir / "log.jsonl", "a") as fh:
                fh.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")
            with open(out_dir / "timing.jsonl", "a") as fh:
                fh.write(json.dumps({"epoch": epoch, "wall_time": walls[-1]}) + "\n")
        log.info("epoch %d loss %.4f train acc %.3f val acc %s", epoch, rec.total,
                 rec.train["accuracy"], rec.val.get("accuracy"))
        if on_epoch is not None:
            on_epoch(rec)
    final_state = model.state_dict()
    if out_dir is not None:
        save_checkpoint(out_dir / "final.ckpt", final_state)
    return TrainResult(model=model, config=config, history=history, best_epoch=best_epoch,
                       best_state=best_state, final_state=final_state, wall_times=walls)


@dataclass
class AblationResult:
    full: MetricsReport
    variant: MetricsReport
    variant_name: str
    full_result: TrainResult
    variant_result: TrainResult

    def summary(self) -> dict:
        return {"full": self.full.summary(), self.variant_name: self.variant.summary()}


def run_ablation(config: TrainConfig, dataset: DatasetContainer, variant: str | None = None,
                 out_dir=None, split: str = "test") -> AblationResult:
    """Train the full model and one ablation variant with the same seed and
    report both on ``split`` using their best-validation checkpoints."""
    variant = variant or config.ablation
    if variant == "full" or variant not in VARIANTS:
        raise ConfigurationError(f"ablation variant must be one of {VARIANTS[1:]}, got {variant!r}")
    out_dir = Path(out_dir) if out_dir is not None else None
    full_res = train(replace(config, ablation="full"), dataset,
                     None if out_dir is None else out_dir / "full")
    var_res = train(replace(config, ablation=variant), dataset,
                    None if out_dir is None else out_dir / variant)
    return AblationResult(
        full=evaluate(full_res.best_model(), dataset[split]),
        variant=evaluate(var_res.best_model(), dataset[split]),
        variant_name=variant,
        full_result=full_res,
        variant_result=var_res,
    )


def write_json(path, payload) -> None:
    atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())
