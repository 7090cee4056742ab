"""The DisMS-TS classifier assembled from encoder, disentangler and head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .disentangle import DisentangledPair, disentangle, init_projectors
from .encoder import conv_geometry, encode_scale, init_encoder
from .errors import ConfigurationError, DepthError, StateError
from .multiscale import build_pyramid, max_depth, scale_lengths
from .objective import LossBreakdown, fuse, head_forward, init_head, total_loss

VARIANTS = ("full", "no-lmp", "swf-mean")


@dataclass(frozen=True)
class ModelConfig:
    n_vars: int
    length: int
    n_classes: int
    S: int = 3
    window: int = 2
    channels: int = 16
    kernel: int = 8
    stride: int | None = None
    hidden: int = 32
    head_hidden: int | None = None  # defaults to n_vars * hidden
    tau: float = 1.0
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if min(self.n_vars, self.length, self.n_classes, self.channels, self.kernel, self.hidden) < 1:
            raise ConfigurationError(f"model sizes must be positive: {self}")
        if min(scale_lengths(self.length, self.S, self.window)) < 1:
            best = max_depth(self.length, self.window)
            raise DepthError(f"S={self.S} is infeasible for T={self.length}; maximum feasible S is {best}", best)

    @property
    def rep_dim(self) -> int:
        return self.n_vars * self.hidden

    @property
    def head_in(self) -> int:
        if self.variant == "swf-mean":
            return self.rep_dim
        return (self.S + 2) * self.rep_dim

    @property
    def lengths(self) -> list[int]:
        return scale_lengths(self.length, self.S, self.window)


@dataclass
class ForwardResult:
    reps: list[Tensor]                 # F_s per scale, (B, N*d)
    pairs: list[DisentangledPair] = field(default_factory=list)
    logits: Tensor | None = None

    @property
    def shared(self) -> list[Tensor] | None:
        return [p.shared for p in self.pairs] if self.pairs else None

    @property
    def specific(self) -> list[Tensor] | None:
        return [p.specific for p in self.pairs] if self.pairs else None


class DisMSTS:
    """Multi-scale encoder + disentanglement + two-layer head, with named parameters."""

    def __init__(self, config: ModelConfig, seed: int | np.random.Generator = 0):
        self.config = config
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        init_encoder(self.params, rng, config.n_vars, config.lengths, config.channels,
                     config.kernel, config.stride, config.hidden,
                     use_lmp=config.variant != "no-lmp")
        if config.variant != "swf-mean":
            init_projectors(self.params, rng, config.S + 1, config.rep_dim)
        head_hidden = config.head_hidden or config.rep_dim
        init_head(self.params, rng, config.head_in, head_hidden, config.n_classes)

    # -- forward ---------------------------------------------------------------
    def encode(self, values) -> list[Tensor]:
        cfg = self.config
        values = ad.as_tensor(values)
        if values.ndim != 3 or values.shape[1:] != (cfg.n_vars, cfg.length):
            raise ConfigurationError(
                f"expected input (batch, {cfg.n_vars}, {cfg.length}), got {values.shape}")
        pyramid = build_pyramid(values, cfg.S, cfg.window)
        return [encode_scale(x_s, self.params, s, cfg.n_vars, cfg.kernel, cfg.stride,
                             use_lmp=cfg.variant != "no-lmp")
                for s, x_s in enumerate(pyramid.scales)]

    def forward(self, values) -> ForwardResult:
        cfg = self.config
        reps = self.encode(values)
        if cfg.variant == "swf-mean":
            fused = reps[0]
            for r in reps[1:]:
                fused = fused + r
            fused = ad.scale(fused, 1.0 / len(reps))
            return ForwardResult(reps=reps, logits=head_forward(fused, self.params))
        pairs = [disentangle(F, self.params[f"disentangle.scale{s}.weight"],
                             self.params[f"disentangle.scale{s}.bias"], cfg.tau)
                 for s, F in enumerate(reps)]
        return ForwardResult(reps=reps, pairs=pairs, logits=head_forward(fuse(pairs), self.params))

    __call__ = forward

    def loss(self, values, labels, lambda1: float, lambda2: float) -> tuple[LossBreakdown, ForwardResult]:
        out = self.forward(values)
        return total_loss(out.logits, labels, out.shared, out.specific, lambda1, lambda2), out

    def predict(self, values, batch_size: int = 512) -> np.ndarray:
        return self.logits(values, batch_size).argmax(axis=1)

    def logits(self, values, batch_size: int = 512) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        chunks = []
        with ad.no_grad():
            for i in range(0, len(values), batch_size):
                chunks.append(self.forward(values[i:i + batch_size]).logits.data)
        return np.concatenate(chunks, axis=0)

    # -- parameters ------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        ad.zero_grad(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise StateError(f"checkpoint mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise StateError(f"parameter {k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()
            p.zero_grad()

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_checkpoint(path))

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def describe(self) -> dict:
        d = asdict(self.config)
        d["scale_lengths"] = self.config.lengths
        d["conv"] = [conv_geometry(T, self.config.kernel, self.config.stride).__dict__ for T in self.config.lengths]
        return d
