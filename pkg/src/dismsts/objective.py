"""Prediction head, similarity/disparity regularizers and the combined loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .disentangle import DisentangledPair
from .errors import DimensionError, ParameterError


@dataclass
class LossBreakdown:
    class_loss: Tensor
    sim_loss: Tensor | None
    dis_loss: Tensor | None
    total: Tensor
    lambda1: float
    lambda2: float

    def as_dict(self) -> dict:
        return {
            "class_loss": float(self.class_loss.data),
            "sim_loss": None if self.sim_loss is None else float(self.sim_loss.data),
            "dis_loss": None if self.dis_loss is None else float(self.dis_loss.data),
            "total": float(self.total.data),
        }


def init_head(params: dict, rng: np.random.Generator, in_dim: int, hidden: int, n_classes: int) -> None:
    for name, (fan_in, fan_out) in (("fc1", (in_dim, hidden)), ("fc2", (hidden, n_classes))):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"head.{name}.weight"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        params[f"head.{name}.bias"] = Tensor(rng.uniform(-bound, bound, (fan_out,)), requires_grad=True)


def head_forward(features, params: dict) -> Tensor:
    w1 = params["head.fc1.weight"]
    if features.shape[-1] != w1.shape[0]:
        raise DimensionError(f"head expects width {w1.shape[0]}, got features {features.shape}")
    hidden = ad.relu(ad.matmul(features, w1) + params["head.fc1.bias"])
    return ad.matmul(hidden, params["head.fc2.weight"]) + params["head.fc2.bias"]


def fuse(pairs: Sequence[DisentangledPair]) -> Tensor:
    """Mean of the shared parts concatenated with every specific part in scale order."""
    if not pairs:
        raise DimensionError("fusion needs at least one scale")
    widths = {p.shared.shape for p in pairs} | {p.specific.shape for p in pairs}
    if len(widths) != 1:
        raise DimensionError(f"inconsistent representation shapes across scales: {sorted(widths)}")
    # mean taken as an offset from the first scale: identical parts average to
    # that vector exactly instead of picking up rounding from sum-then-divide
    base = pairs[0].shared
    shared = base
    if len(pairs) > 1:
        offset = pairs[1].shared - base
        for p in pairs[2:]:
            offset = offset + (p.shared - base)
        shared = base + ad.scale(offset, 1.0 / len(pairs))
    return ad.concat([shared] + [p.specific for p in pairs], axis=-1)


def fuse_and_predict(pairs: Sequence[DisentangledPair], params: dict) -> Tensor:
    return head_forward(fuse(pairs), params)


def _as_scale_list(reps) -> list[Tensor]:
    if isinstance(reps, Tensor):
        return [reps[i] for i in range(reps.shape[0])]
    if isinstance(reps, np.ndarray):
        return [Tensor(r) for r in reps]
    return [ad.as_tensor(r) for r in reps]


def _pairwise_cosine_mse(reps, target: float) -> Tensor:
    reps = _as_scale_list(reps)
    S = len(reps) - 1
    if S <= 0:
        return Tensor(0.0)
    total = None
    for i in range(S):
        for j in range(i + 1, S + 1):
            term = ad.mse(ad.cosine_similarity(reps[i], reps[j]), target)
            total = term if total is None else total + term
    return ad.scale(total, 2.0 / (S * (S + 1)))


def similarity_loss(shared) -> Tensor:
    """Mean over scale pairs of the squared distance of their cosine from 1."""
    return _pairwise_cosine_mse(shared, 1.0)


def disparity_loss(specific) -> Tensor:
    """Mean over scale pairs of the squared cosine (pushes towards orthogonality)."""
    return _pairwise_cosine_mse(specific, 0.0)


def total_loss(logits, labels, shared, specific, lambda1: float, lambda2: float) -> LossBreakdown:
    if lambda1 < 0 or lambda2 < 0:
        raise ParameterError(f"loss weights must be non-negative, got lambda1={lambda1}, lambda2={lambda2}")
    cls = ad.softmax_cross_entropy(logits, labels)
    if shared is None and specific is None:
        return LossBreakdown(cls, None, None, cls, float(lambda1), float(lambda2))
    sim = similarity_loss(shared)
    dis = disparity_loss(specific)
    total = cls + ad.scale(sim, lambda1) + ad.scale(dis, lambda2)
    return LossBreakdown(cls, sim, dis, total, float(lambda1), float(lambda2))
