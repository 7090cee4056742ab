"""Temperature-sigmoid masking that splits a scale representation in two."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ParameterError


@dataclass
class DisentangledPair:
    mask_shared: Tensor
    mask_specific: Tensor
    shared: Tensor
    specific: Tensor
    tau: float


def init_projectors(params: dict, rng: np.random.Generator, n_scales: int, dim: int) -> None:
    bound = 1.0 / np.sqrt(dim)
    for s in range(n_scales):
        params[f"disentangle.scale{s}.weight"] = Tensor(rng.uniform(-bound, bound, (dim, dim)), requires_grad=True)
        params[f"disentangle.scale{s}.bias"] = Tensor(np.zeros(dim), requires_grad=True)


def disentangle(F, weight, bias, tau: float = 1.0) -> DisentangledPair:
    """M = F W + b; shared mask sigmoid(M/tau), specific mask sigmoid(-M/tau).

    Because sigmoid(x) + sigmoid(-x) = 1 the two masks are complementary and the
    two parts add back up to F.
    """
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    F = ad.as_tensor(F)
    logits = ad.matmul(F, weight) + bias if F.ndim >= 2 else ad.matmul(F.reshape(1, -1), weight).reshape(-1) + bias
    scaled = ad.scale(logits, 1.0 / tau)
    m_sha = ad.sigmoid(scaled)
    m_spe = ad.sigmoid(ad.neg(scaled))
    return DisentangledPair(mask_shared=m_sha, mask_specific=m_spe,
                            shared=m_sha * F, specific=m_spe * F, tau=float(tau))
