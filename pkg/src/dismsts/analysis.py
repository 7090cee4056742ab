"""Cross-scale correlation matrices and representation dumps."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import atomic_write_bytes
from .errors import CorruptionError, DataError, ParameterError, VersionError
from .model import DisMSTS

MODES = ("raw", "shared", "specific")
REPS_MAGIC = b"DMTS-REPS\n"
REPS_VERSION = 1


@dataclass
class CorrelationMatrix:
    entries: np.ndarray     # (S+1, S+1)
    mode: str
    labels: list[str]
    measure: str = "cosine"

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def off_diagonal(self) -> np.ndarray:
        mask = ~np.eye(self.size, dtype=bool)
        return self.entries[mask]

    def mean_off_diagonal(self, absolute: bool = False) -> float:
        off = self.off_diagonal()
        if off.size == 0:
            return float("nan")
        return float(np.mean(np.abs(off) if absolute else off))


def representations(model: DisMSTS, values, batch_size: int = 512) -> dict[str, np.ndarray]:
    """Per-scale raw/shared/specific vectors as arrays of shape (S+1, B, N*d)."""
    values = np.asarray(values, dtype=np.float64)
    raw, sha, spe = [], [], []
    with ad.no_grad():
        for i in range(0, len(values), batch_size):
            out = model.forward(values[i:i + batch_size])
            raw.append(np.stack([r.data for r in out.reps]))
            if out.pairs:
                sha.append(np.stack([p.shared.data for p in out.pairs]))
                spe.append(np.stack([p.specific.data for p in out.pairs]))
    reps = {"raw": np.concatenate(raw, axis=1)}
    if sha:
        reps["shared"] = np.concatenate(sha, axis=1)
        reps["specific"] = np.concatenate(spe, axis=1)
    return reps


def correlation_from_vectors(vectors: np.ndarray, mode: str = "raw", measure: str = "cosine",
                             eps: float = ad.COSINE_EPS) -> CorrelationMatrix:
    """Entry (i, j) is the sample-mean cosine (or Pearson) score between the scale-i
    and scale-j vectors of each sample. A scale is perfectly correlated with itself,
    so the diagonal is 1 by definition."""
    if measure not in ("cosine", "pearson"):
        raise ParameterError(f"unknown measure {measure!r}")
    v = np.asarray(vectors, dtype=np.float64)
    if measure == "pearson":
        v = v - v.mean(axis=-1, keepdims=True)
    norms = np.maximum(np.linalg.norm(v, axis=-1), eps)          # (S+1, B)
    unit = v / norms[..., None]
    n_scales = v.shape[0]
    M = np.eye(n_scales)
    for i in range(n_scales):
        for j in range(i + 1, n_scales):
            c = float(np.mean(np.sum(unit[i] * unit[j], axis=-1)))
            M[i, j] = M[j, i] = min(1.0, max(-1.0, c))
    return CorrelationMatrix(entries=M, mode=mode, labels=[f"s{s}" for s in range(n_scales)],
                             measure=measure)


def cross_scale_correlation(model: DisMSTS, values, mode: str = "shared",
                            measure: str = "cosine") -> CorrelationMatrix:
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    reps = representations(model, values)
    if mode not in reps:
        raise ParameterError(f"model variant {model.config.variant!r} has no {mode} representations")
    return correlation_from_vectors(reps[mode], mode, measure)


def export_matrix(matrix: CorrelationMatrix, path) -> Path:
    """Plain-text grid: header row and first column hold scale labels, the top-left
    cell holds the mode tag; values are printed with 17 significant digits."""
    path = Path(path)
    lines = ["\t".join([matrix.mode] + matrix.labels)]
    for label, row in zip(matrix.labels, matrix.entries):
        lines.append("\t".join([label] + [f"{x:.17g}" for x in row]))
    try:
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())
    except OSError as exc:
        raise OSError(f"cannot write correlation matrix to {path}: {exc}") from exc
    return path


def read_matrix(path) -> CorrelationMatrix:
    rows = [line.split("\t") for line in Path(path).read_text().splitlines() if line]
    header = rows[0]
    labels = header[1:]
    entries = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    if entries.shape != (len(labels), len(labels)):
        raise DataError(f"{path}: expected a {len(labels)}x{len(labels)} grid, got {entries.shape}")
    return CorrelationMatrix(entries=entries, mode=header[0], labels=labels)


# -- representation dump -------------------------------------------------------
#   REPS_MAGIC  version byte  n_samples n_scales dim (uint64 LE)
#   labels: n_samples uint64 LE
#   shared: n_scales*n_samples*dim float64 LE, then specific in the same layout


def representation_dump(model: DisMSTS, values, labels, path) -> Path:
    reps = representations(model, values)
    if "shared" not in reps:
        raise ParameterError(f"model variant {model.config.variant!r} has no shared/specific parts")
    labels = np.asarray(labels, dtype=np.int64)
    n_scales, n_samples, dim = reps["shared"].shape
    if labels.shape != (n_samples,):
        raise DataError(f"{labels.shape[0]} labels for {n_samples} samples")
    payload = b"".join([
        REPS_MAGIC, bytes([REPS_VERSION]), struct.pack("<3Q", n_samples, n_scales, dim),
        np.ascontiguousarray(labels, dtype="<u8").tobytes(),
        np.ascontiguousarray(reps["shared"], dtype="<f8").tobytes(),
        np.ascontiguousarray(reps["specific"], dtype="<f8").tobytes(),
    ])
    path = Path(path)
    try:
        atomic_write_bytes(path, payload)
    except OSError as exc:
        raise OSError(f"cannot write representation dump to {path}: {exc}") from exc
    return path


@dataclass
class RepresentationDump:
    labels: np.ndarray      # (n_samples,)
    shared: np.ndarray      # (n_scales, n_samples, dim)
    specific: np.ndarray

    def rows(self, kind: str = "specific"):
        """(vectors, scale ids, sample labels), one row per (scale, sample)."""
        arr = getattr(self, kind)
        n_scales, n_samples, dim = arr.shape
        return (arr.reshape(-1, dim),
                np.repeat(np.arange(n_scales), n_samples),
                np.tile(self.labels, n_scales))


def read_representation_dump(path) -> RepresentationDump:
    payload = Path(path).read_bytes()
    if not payload.startswith(REPS_MAGIC):
        raise CorruptionError(f"{path}: missing DMTS-REPS magic header")
    pos = len(REPS_MAGIC)
    if payload[pos] != REPS_VERSION:
        raise VersionError(f"{path}: unsupported dump version {payload[pos]}")
    n_samples, n_scales, dim = struct.unpack_from("<3Q", payload, pos + 1)
    pos += 1 + 24
    block = n_scales * n_samples * dim
    expected = pos + 8 * n_samples + 16 * block
    if len(payload) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes, got {len(payload)}")
    labels = np.frombuffer(payload, "<u8", n_samples, pos).astype(np.int64)
    pos += 8 * n_samples
    shared = np.frombuffer(payload, "<f8", block, pos).reshape(n_scales, n_samples, dim).astype(np.float64)
    pos += 8 * block
    specific = np.frombuffer(payload, "<f8", block, pos).reshape(n_scales, n_samples, dim).astype(np.float64)
    return RepresentationDump(labels=labels, shared=shared, specific=specific)


def nearest_centroid_purity(vectors: np.ndarray, groups: np.ndarray) -> float:
    """Fraction of rows whose nearest group centroid (cosine) is their own group."""
    unit = vectors / np.maximum(np.linalg.norm(vectors, axis=1, keepdims=True), ad.COSINE_EPS)
    ids = np.unique(groups)
    cents = np.stack([unit[groups == g].mean(axis=0) for g in ids])
    cents /= np.maximum(np.linalg.norm(cents, axis=1, keepdims=True), ad.COSINE_EPS)
    assigned = ids[np.argmax(unit @ cents.T, axis=1)]
    return float(np.mean(assigned == groups))
