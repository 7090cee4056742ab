"""Dataset container, on-disk format, normalization and the planted synthetic generator.

On disk a dataset is a directory holding ``manifest.json`` plus one binary file
per split::

    b"DMTS-DATA\\n"  version byte  B N T (uint64 LE)
    B*N*T float64 LE values (sample, variable, time)  B uint64 LE labels
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write_bytes
from .errors import CorruptionError, DataError, ParameterError, VersionError

MAGIC = b"DMTS-DATA\n"
VERSION = 1
HEADER_SIZE = len(MAGIC) + 1 + 3 * 8
SPLITS = ("train", "val", "test")


@dataclass
class Split:
    values: np.ndarray  # (B, N, T) float64
    labels: np.ndarray  # (B,) int64

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class DatasetContainer:
    manifest: dict
    splits: dict[str, Split]

    @property
    def n_vars(self) -> int:
        return int(self.manifest["n_variables"])

    @property
    def length(self) -> int:
        return int(self.manifest["length"])

    @property
    def n_classes(self) -> int:
        return int(self.manifest["n_classes"])

    def __getitem__(self, name: str) -> Split:
        return self.splits[name]

    def validate(self) -> None:
        K = self.n_classes
        seen: dict[bytes, str] = {}
        for name, sp in self.splits.items():
            if sp.values.ndim != 3 or sp.values.shape[1:] != (self.n_vars, self.length):
                raise DataError(f"split {name}: values shape {sp.values.shape} does not match "
                                f"manifest (N={self.n_vars}, T={self.length})")
            if len(sp.labels) != len(sp.values):
                raise DataError(f"split {name}: {len(sp.values)} samples but {len(sp.labels)} labels")
            declared = self.manifest["splits"].get(name, {}).get("count")
            if declared is not None and declared != len(sp):
                raise DataError(f"split {name}: manifest declares {declared} samples, found {len(sp)}")
            bad = np.flatnonzero(~np.isfinite(sp.values).all(axis=(1, 2)))
            if bad.size:
                raise DataError(f"split {name}: non-finite value in sample {int(bad[0])}")
            out = np.flatnonzero((sp.labels < 0) | (sp.labels >= K))
            if out.size:
                i = int(out[0])
                raise DataError(f"split {name}: label {int(sp.labels[i])} at sample {i} outside [0, {K})")
            for i, row in enumerate(sp.values):
                key = hashlib.blake2b(row.tobytes(), digest_size=16).digest()
                other = seen.get(key)
                if other is not None and other != name:
                    raise DataError(f"sample {i} of split {name} also appears in split {other}")
                seen[key] = name


def encode_split(split: Split) -> bytes:
    B, N, T = split.values.shape
    return b"".join([
        MAGIC, bytes([VERSION]), struct.pack("<3Q", B, N, T),
        np.ascontiguousarray(split.values, dtype="<f8").tobytes(),
        np.ascontiguousarray(split.labels, dtype="<u8").tobytes(),
    ])


def decode_split(payload: bytes, where: str = "payload") -> Split:
    if not payload.startswith(MAGIC):
        raise CorruptionError(f"{where}: missing DMTS-DATA magic header")
    if len(payload) < HEADER_SIZE:
        raise CorruptionError(f"{where}: expected at least {HEADER_SIZE} header bytes, got {len(payload)}")
    version = payload[len(MAGIC)]
    if version != VERSION:
        raise VersionError(f"{where}: unsupported data format version {version} (expected {VERSION})")
    B, N, T = struct.unpack_from("<3Q", payload, len(MAGIC) + 1)
    expected = HEADER_SIZE + 8 * B * N * T + 8 * B
    if len(payload) != expected:
        raise CorruptionError(f"{where}: expected {expected} bytes for B={B}, N={N}, T={T}, "
                              f"got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8", count=B * N * T, offset=HEADER_SIZE)
    labels = np.frombuffer(payload, dtype="<u8", count=B, offset=HEADER_SIZE + 8 * B * N * T)
    values = values.reshape(B, N, T).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values).all(axis=(1, 2)))
    if bad.size:
        raise DataError(f"{where}: non-finite value in sample {int(bad[0])}")
    return Split(values=values, labels=labels.astype(np.int64))


def save(container: DatasetContainer, directory) -> Path:
    """Write the split files and manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = copy.deepcopy(container.manifest)
    manifest.setdefault("format", "DMTS-DATA")
    manifest["version"] = VERSION
    manifest["splits"] = {}
    for name, sp in container.splits.items():
        fname = f"{name}.bin"
        atomic_write_bytes(directory / fname, encode_split(sp))
        manifest["splits"][name] = {"count": len(sp), "file": fname}
    container.manifest = manifest
    path = directory / "manifest.json"
    atomic_write_bytes(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def load(manifest_path) -> DatasetContainer:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{path}: manifest is not valid JSON ({exc})") from exc
    if manifest.get("version") != VERSION:
        raise VersionError(f"{path}: unsupported manifest version {manifest.get('version')}")
    for key in ("n_variables", "length", "n_classes", "splits"):
        if key not in manifest:
            raise DataError(f"{path}: manifest lacks required key {key!r}")
    splits = {}
    for name, entry in manifest["splits"].items():
        fpath = path.parent / entry["file"]
        sp = decode_split(fpath.read_bytes(), where=str(fpath))
        if len(sp) != entry["count"]:
            raise CorruptionError(f"{fpath}: manifest declares {entry['count']} samples, payload holds {len(sp)}")
        splits[name] = sp
    container = DatasetContainer(manifest=manifest, splits=splits)
    container.validate()
    return container


# -- normalization -----------------------------------------------------------


def normalize(container: DatasetContainer, mode: str = "zscore") -> DatasetContainer:
    """Per-variable z-score using train statistics only, reapplied to every split."""
    if mode == "none":
        out = copy.deepcopy(container)
        out.manifest["normalization"] = {"mode": "none"}
        return out
    if mode != "zscore":
        raise ParameterError(f"unknown normalization mode {mode!r}")
    train = container.splits["train"].values
    mean = train.mean(axis=(0, 2))
    std = train.std(axis=(0, 2))
    flat = std == 0
    warnings = [f"variable {int(n)} has zero variance on train; left unscaled (std recorded as 1)"
                for n in np.flatnonzero(flat)]
    # constant variables pass through unchanged
    mean = np.where(flat, 0.0, mean)
    std = np.where(flat, 1.0, std)
    splits = {name: Split(values=(sp.values - mean[None, :, None]) / std[None, :, None],
                          labels=sp.labels.copy())
              for name, sp in container.splits.items()}
    manifest = copy.deepcopy(container.manifest)
    manifest["normalization"] = {"mode": "zscore", "mean": mean.tolist(), "std": std.tolist(),
                                 "warnings": warnings}
    return DatasetContainer(manifest=manifest, splits=splits)


def apply_normalization(values: np.ndarray, record: dict | None) -> np.ndarray:
    if not record or record.get("mode") != "zscore":
        return values
    mean = np.asarray(record["mean"])
    std = np.asarray(record["std"])
    return (values - mean[None, :, None]) / std[None, :, None]


def ensure_val_split(container: DatasetContainer, fraction: float = 0.2, seed: int = 0) -> DatasetContainer:
    """Carve a validation split out of train when the dataset ships without one."""
    if "val" in container.splits:
        return container
    train = container.splits["train"]
    perm = np.random.default_rng(seed).permutation(len(train))
    n_val = max(1, int(round(fraction * len(train))))
    keep, val = np.sort(perm[:-n_val]), np.sort(perm[-n_val:])
    splits = dict(container.splits)
    splits["train"] = Split(train.values[keep], train.labels[keep])
    splits["val"] = Split(train.values[val], train.labels[val])
    manifest = copy.deepcopy(container.manifest)
    manifest["splits"] = {k: {"count": len(v), "file": f"{k}.bin"} for k, v in splits.items()}
    manifest["val_split"] = {"carved_from": "train", "fraction": fraction, "seed": seed}
    return DatasetContainer(manifest=manifest, splits=splits)


# -- synthetic data ------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    n_vars: int = 4
    length: int = 128
    n_classes: int = 3
    per_class: int = 200
    seed: int = 0
    noise: float = 0.3
    max_depth: int = 3
    labels: str = "both"  # both | trend | burst
    burst_length: int = 16
    burst_amplitude: float = 1.0
    split_fractions: tuple = (0.6, 0.2, 0.2)

    def validate(self) -> None:
        if min(self.n_vars, self.n_classes, self.per_class) < 1:
            raise ParameterError("n_vars, n_classes and per_class must be positive")
        if self.n_classes < 2:
            raise ParameterError("need at least two classes")
        if self.length < 2 ** self.max_depth:
            raise ParameterError(f"T={self.length} cannot support {self.max_depth} pooling levels "
                                 f"(needs T >= {2 ** self.max_depth})")
        if self.burst_length < 2 or self.burst_length % 2:
            raise ParameterError("burst_length must be an even number >= 2")
        if self.noise < 0:
            raise ParameterError("noise must be non-negative")
        if self.labels not in ("both", "trend", "burst"):
            raise ParameterError(f"unknown label mode {self.labels!r}")
        n_slots = self.n_burst_codes
        if self.length // n_slots < self.burst_length + 4:
            raise ParameterError(f"T={self.length} too short for {n_slots} burst slots of length {self.burst_length}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or len(self.split_fractions) != 3:
            raise ParameterError("split_fractions must be three numbers summing to 1")
        if min(int(round(f * self.per_class)) for f in self.split_fractions) < 1:
            raise ParameterError("per_class too small for the requested split fractions")

    @property
    def n_trend_codes(self) -> int:
        if self.labels == "trend":
            return self.n_classes
        if self.labels == "burst":
            return 2
        return self.n_classes // 2 + 1

    @property
    def n_burst_codes(self) -> int:
        if self.labels == "burst":
            return self.n_classes
        if self.labels == "trend":
            return 2
        return (self.n_classes - 1) // 2 + 1


def class_codes(label: int, mode: str) -> tuple[int | None, int | None]:
    """(trend code, burst code) a class pins down; None means drawn at random.

    In ``both`` mode consecutive classes differ in exactly one component, so
    neither component alone separates every class.
    """
    if mode == "both":
        return (label + 1) // 2, label // 2
    if mode == "trend":
        return label, None
    return None, label


def trend_curve(code: int, T: int, shift: float = 0.0) -> np.ndarray:
    u = (np.arange(T) + shift) / (T - 1)
    return np.cos(np.pi * (code + 1) * u)


def burst_curve(code: int, T: int, n_slots: int, length: int, offset: int) -> np.ndarray:
    """Alternating-sign block inside slot ``code``; it starts on an even index and
    has even length, so one window-2 average pooling step cancels it exactly."""
    out = np.zeros(T)
    slot = T // n_slots
    start = code * slot + (slot - length) // 2 + offset
    start -= start % 2
    start = min(max(start, 0), T - length)
    start -= start % 2
    t = np.arange(start, start + length)
    out[t] = np.where(t % 2 == 0, 1.0, -1.0)
    return out


def synth_components(spec: SynthSpec):
    """Generate (shared, specific, labels) arrays before noise; shapes (M, N, T)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    N, T, K = spec.n_vars, spec.length, spec.n_classes
    n_trend = spec.n_trend_codes
    n_burst = spec.n_burst_codes
    labels = np.repeat(np.arange(K), spec.per_class)
    M = len(labels)
    shared = np.empty((M, N, T))
    specific = np.empty((M, N, T))
    jitter = max(0, (T // n_burst - spec.burst_length) // 4)
    for i, y in enumerate(labels):
        tc, bc = class_codes(int(y), spec.labels)
        if tc is None:
            tc = int(rng.integers(n_trend))
        if bc is None:
            bc = int(rng.integers(n_burst))
        shift = rng.uniform(-2.0, 2.0)
        offset = 2 * int(rng.integers(-(jitter // 2), jitter // 2 + 1)) if jitter else 0
        base_trend = trend_curve(tc, T, shift)
        base_burst = burst_curve(bc, T, n_burst, spec.burst_length, offset)
        amp_t = rng.uniform(0.7, 1.3, size=N)
        amp_b = spec.burst_amplitude * rng.uniform(0.7, 1.3, size=N)
        shared[i] = amp_t[:, None] * base_trend[None, :]
        specific[i] = amp_b[:, None] * base_burst[None, :]
    return shared, specific, labels, rng


def generate_synthetic(spec: SynthSpec) -> DatasetContainer:
    """Planted dataset: smooth class trend (survives pooling) + finest-scale
    alternating bursts (cancelled by pooling) + Gaussian noise."""
    shared, specific, labels, rng = synth_components(spec)
    values = shared + specific + spec.noise * rng.standard_normal(shared.shape)
    splits: dict[str, list[int]] = {s: [] for s in SPLITS}
    f_train, f_val, _ = spec.split_fractions
    for k in range(spec.n_classes):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(f_train * len(idx)))
        n_va = int(round(f_val * len(idx)))
        splits["train"].extend(idx[:n_tr])
        splits["val"].extend(idx[n_tr:n_tr + n_va])
        splits["test"].extend(idx[n_tr + n_va:])
    out = {}
    for name, idx in splits.items():
        idx = np.asarray(idx, dtype=np.int64)
        idx = idx[rng.permutation(len(idx))]
        out[name] = Split(values=values[idx].copy(), labels=labels[idx].astype(np.int64))
    manifest = {
        "format": "DMTS-DATA",
        "version": VERSION,
        "name": f"synthetic-{spec.labels}-seed{spec.seed}",
        "n_variables": spec.n_vars,
        "length": spec.length,
        "n_classes": spec.n_classes,
        "splits": {k: {"count": len(v), "file": f"{k}.bin"} for k, v in out.items()},
        "normalization": None,
        "synthetic": {**asdict(spec), "split_fractions": list(spec.split_fractions)},
    }
    return DatasetContainer(manifest=manifest, splits=out)
