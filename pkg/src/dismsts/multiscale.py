"""Scale pyramid built by repeated non-overlapping average pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, avg_pool1d
from .errors import DepthError, ParameterError


@dataclass
class ScalePyramid:
    scales: list[Tensor]  # each (B, N, T_s); scales[0] is the input itself
    window: int
    S: int

    @property
    def lengths(self) -> list[int]:
        return [t.shape[-1] for t in self.scales]

    def __len__(self) -> int:
        return len(self.scales)


def max_depth(T: int, window: int = 2) -> int:
    """Largest S for which every pooled scale keeps at least one point."""
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if window == 1:
        raise ParameterError("window 1 never shrinks the series; depth is unbounded")
    depth = 0
    while T // window >= 1:
        T //= window
        depth += 1
    return depth


def scale_lengths(T: int, S: int, window: int = 2) -> list[int]:
    lengths = [T]
    for _ in range(S):
        lengths.append(lengths[-1] // window)
    return lengths


def build_pyramid(values, S: int, window: int = 2) -> ScalePyramid:
    """Return ``S + 1`` scales; pooling acts on the last (time) axis only,
    so variables never mix."""
    if S < 0:
        raise ParameterError(f"S must be non-negative, got {S}")
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    x = as_tensor(values)
    T = x.shape[-1]
    if T < 1:
        raise DepthError("series has no time steps", 0)
    if min(scale_lengths(T, S, window)) < 1:
        best = max_depth(T, window)
        raise DepthError(
            f"S={S} with window {window} empties the pyramid for T={T}; maximum feasible S is {best}",
            best)
    scales = [x]
    for _ in range(S):
        scales.append(avg_pool1d(scales[-1], window))
    return ScalePyramid(scales=scales, window=window, S=S)


def pyramid_arrays(values: np.ndarray, S: int, window: int = 2) -> list[np.ndarray]:
    return [t.data for t in build_pyramid(values, S, window).scales]
