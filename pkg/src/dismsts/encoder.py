"""Multi-scale temporal encoder.

Each variable of each scale gets its own convolution bank (local multi-channel
projection) followed by its own gated recurrent cell (global temporal
aggregation). The final hidden states of the N variables are scaled by a
learnable per-variable score and concatenated into one vector per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError


@dataclass(frozen=True)
class ConvGeometry:
    kernel: int
    stride: int
    length: int  # output steps L_s


def conv_geometry(T_s: int, kernel: int = 8, stride: int | None = None) -> ConvGeometry:
    k = min(kernel, T_s)
    st = stride if stride is not None else max(1, k // 2)
    return ConvGeometry(kernel=k, stride=st, length=(T_s - k) // st + 1)


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_encoder(params: dict, rng: np.random.Generator, n_vars: int, lengths: list[int],
                 channels: int, kernel: int, stride: int | None, hidden: int,
                 use_lmp: bool = True) -> None:
    """Register encoder parameters into ``params`` (ordered: scale, variable, conv, gru)."""
    in_size = channels if use_lmp else 1
    for s, T_s in enumerate(lengths):
        geo = conv_geometry(T_s, kernel, stride)
        for n in range(n_vars):
            pre = f"encoder.scale{s}.var{n}"
            if use_lmp:
                bound = 1.0 / np.sqrt(geo.kernel)
                params[f"{pre}.conv.kernels"] = _uniform(rng, bound, (channels, geo.kernel))
                params[f"{pre}.conv.bias"] = _uniform(rng, bound, (channels,))
            bound = 1.0 / np.sqrt(hidden)
            params[f"{pre}.gru.w_input"] = _uniform(rng, bound, (in_size, 3 * hidden))
            params[f"{pre}.gru.w_hidden"] = _uniform(rng, bound, (hidden, 3 * hidden))
            params[f"{pre}.gru.bias"] = _uniform(rng, bound, (3 * hidden,))
    if n_vars > 1:
        params["encoder.beta"] = Tensor(np.ones(n_vars), requires_grad=True)


def lmp_project(series, kernels, bias, stride: int) -> Tensor:
    """ReLU(W (x) x + b) for one series (..., T) -> (..., C, L)."""
    return ad.relu(ad.conv1d(series, kernels, bias, stride))


def gta_aggregate(local, w_input, w_hidden, bias) -> Tensor:
    """Run a gated recurrent cell over the last axis of ``local`` (..., C, L).

    Weights may carry leading dimensions (one cell per variable); they must then
    match the first axis of ``local``. Returns the final hidden state (..., d).
    """
    local = ad.as_tensor(local)
    d = w_hidden.shape[-2]
    seq = local.swapaxes(-1, -2)  # (..., L, C)
    L, I = seq.shape[-2:]
    lead = seq.shape[:-2]
    if w_input.ndim == 3:
        P = w_input.shape[0]
        if lead[:1] != (P,):
            raise ConfigurationError(f"{P} recurrent cells for input with leading shape {lead}")
        flat = seq.reshape(P, -1, I)
        proj = ad.matmul(flat, w_input) + bias.reshape(P, 1, 3 * d)
    else:
        flat = seq.reshape(-1, I)
        proj = ad.matmul(flat, w_input) + bias
    proj = proj.reshape(lead + (L, 3 * d))
    gate_in = proj[..., :2 * d]
    cand_in = proj[..., 2 * d:]
    u_gates = w_hidden[..., :2 * d]
    u_cand = w_hidden[..., 2 * d:]

    h = None
    for t in range(L):
        a = gate_in[..., t, :]
        c = cand_in[..., t, :]
        if h is None:
            # h0 = 0: recurrent terms vanish
            zr = ad.sigmoid(a)
            z = zr[..., :d]
            n = ad.tanh(c)
            h = z * n
            continue
        zr = ad.sigmoid(a + _hmat(h, u_gates))
        z = zr[..., :d]
        r = zr[..., d:]
        n = ad.tanh(c + _hmat(r * h, u_cand))
        h = h + z * (n - h)
    return h


def _hmat(h: Tensor, u: Tensor) -> Tensor:
    if h.ndim >= 2:
        return ad.matmul(h, u)
    return ad.matmul(h.reshape(1, -1), u).reshape(-1)


def _stacked(params: dict, names: list[str]) -> Tensor:
    return ad.stack([params[n] for n in names], axis=0)


def encode_scale(x_s, params: dict, scale: int, n_vars: int, kernel: int = 8,
                 stride: int | None = None, use_lmp: bool = True) -> Tensor:
    """Encode one scale batch (B, N, T_s) into F_s of shape (B, N*d)."""
    x_s = ad.as_tensor(x_s)
    if x_s.ndim != 3 or x_s.shape[1] != n_vars:
        raise ConfigurationError(
            f"scale {scale}: expected (batch, {n_vars}, time) input, got {x_s.shape}")
    B, N, T_s = x_s.shape
    pre = [f"encoder.scale{scale}.var{n}" for n in range(N)]
    missing = [p for p in pre if f"{p}.gru.w_input" not in params]
    if missing:
        raise ConfigurationError(f"no encoder parameters for {missing[0]} (model built for fewer variables or scales)")
    xv = x_s.swapaxes(0, 1)                                         # (N, B, T_s)
    if use_lmp:
        geo = conv_geometry(T_s, kernel, stride)
        kernels = _stacked(params, [f"{p}.conv.kernels" for p in pre])  # (N, C, k)
        if kernels.shape[-1] != geo.kernel:
            raise ConfigurationError(
                f"scale {scale}: kernel width {kernels.shape[-1]} does not fit length {T_s}")
        bias = _stacked(params, [f"{p}.conv.bias" for p in pre])        # (N, C)
        C = kernels.shape[1]
        local = lmp_project(xv, kernels.reshape(N, 1, C, geo.kernel), bias.reshape(N, 1, C), geo.stride)
    else:
        local = xv.reshape(N, B, 1, T_s)
    H = gta_aggregate(
        local,
        _stacked(params, [f"{p}.gru.w_input" for p in pre]),
        _stacked(params, [f"{p}.gru.w_hidden" for p in pre]),
        _stacked(params, [f"{p}.gru.bias" for p in pre]),
    )                                                               # (N, B, d)
    d = H.shape[-1]
    if N > 1:
        beta = params["encoder.beta"]
        if beta.shape != (N,):
            raise ConfigurationError(f"beta has shape {beta.shape}, expected ({N},)")
        H = H * beta.reshape(N, 1, 1)
    return H.swapaxes(0, 1).reshape(B, N * d)
