import math

import numpy as np
import pytest

from dismsts import autodiff as ad
from dismsts.autodiff import Tensor
from dismsts.encoder import conv_geometry, encode_scale, gta_aggregate, init_encoder, lmp_project
from dismsts.errors import ConfigurationError, KernelTooLargeError

from conftest import check_grads


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def gru_oracle(seq, w_in, w_h, b):
    """Plain-loop gated recurrent cell; seq is (L, I) nested lists."""
    d = len(w_h)
    h = [0.0] * d
    for x in seq:
        a = [sum(x[i] * w_in[i][j] for i in range(len(x))) + b[j] for j in range(3 * d)]
        z = [sig(a[j] + sum(h[i] * w_h[i][j] for i in range(d))) for j in range(d)]
        r = [sig(a[d + j] + sum(h[i] * w_h[i][d + j] for i in range(d))) for j in range(d)]
        rh = [r[i] * h[i] for i in range(d)]
        n = [math.tanh(a[2 * d + j] + sum(rh[i] * w_h[i][2 * d + j] for i in range(d))) for j in range(d)]
        h = [(1 - z[j]) * h[j] + z[j] * n[j] for j in range(d)]
    return h


def test_lmp_zero_input_zero_bias():
    out = lmp_project(np.zeros(12), np.random.default_rng(0).normal(size=(3, 4)), np.zeros(3), 2)
    assert np.array_equal(out.data, np.zeros((3, 5)))


def test_lmp_mean_kernel_gives_window_means():
    x = np.arange(1.0, 11.0)
    out = lmp_project(x, np.full((1, 4), 0.25), np.zeros(1), 1)
    assert np.allclose(out.data[0], [np.mean(x[i:i + 4]) for i in range(7)])


def test_lmp_too_short():
    with pytest.raises(KernelTooLargeError):
        lmp_project(np.ones(3), np.ones((2, 5)), np.zeros(2), 1)


def test_conv_geometry():
    assert conv_geometry(32, 8, 4).length == 7
    assert conv_geometry(32).stride == 4
    g = conv_geometry(5)  # coarse scale: kernel clipped to the series
    assert (g.kernel, g.stride, g.length) == (5, 2, 1)


def test_gta_zero_everything():
    d, C = 4, 3
    h = gta_aggregate(np.zeros((C, 5)), np.zeros((C, 3 * d)), np.zeros((d, 3 * d)), np.zeros(3 * d))
    assert np.array_equal(h.data, np.zeros(d))


def test_gta_single_step_is_one_cell_update(rng):
    C, d = 3, 2
    x = rng.normal(size=(C, 1))
    w_in, w_h, b = rng.normal(size=(C, 3 * d)), rng.normal(size=(d, 3 * d)), rng.normal(size=3 * d)
    a = x[:, 0] @ w_in + b
    z = 1 / (1 + np.exp(-a[:d]))
    expected = z * np.tanh(a[2 * d:])
    assert np.allclose(gta_aggregate(x, w_in, w_h, b).data, expected, atol=1e-15)


def test_gta_matches_scalar_loop_oracle(rng):
    C, d, L = 3, 4, 3
    local = rng.normal(size=(C, L))
    w_in, w_h, b = rng.normal(size=(C, 3 * d)), rng.normal(size=(d, 3 * d)), rng.normal(size=3 * d)
    got = gta_aggregate(local, w_in, w_h, b).data
    expected = gru_oracle(local.T.tolist(), w_in.tolist(), w_h.tolist(), b.tolist())
    assert np.max(np.abs(got - expected)) < 1e-12


def test_gta_per_variable_cells_match_oracle(rng):
    P, B, C, d, L = 2, 3, 2, 3, 4
    local = rng.normal(size=(P, B, C, L))
    w_in, w_h, b = rng.normal(size=(P, C, 3 * d)), rng.normal(size=(P, d, 3 * d)), rng.normal(size=(P, 3 * d))
    got = gta_aggregate(local, w_in, w_h, b).data
    for p in range(P):
        for i in range(B):
            ref = gru_oracle(local[p, i].T.tolist(), w_in[p].tolist(), w_h[p].tolist(), b[p].tolist())
            assert np.max(np.abs(got[p, i] - ref)) < 1e-12


def test_gta_grad(rng):
    C, d, L = 2, 3, 4
    local = Tensor(rng.normal(size=(C, L)), requires_grad=True)
    ws = [Tensor(rng.normal(size=s) * 0.5, requires_grad=True) for s in [(C, 3 * d), (d, 3 * d), (3 * d,)]]
    w = rng.normal(size=d)
    assert check_grads(lambda: (gta_aggregate(local, *ws) * w).sum(), [local] + ws) < 1e-6


def _params(N, T, rng, C=4, d=3, use_lmp=True):
    params = {}
    init_encoder(params, rng, N, [T], C, 8, None, d, use_lmp)
    return params


def test_univariate_bypasses_beta(rng):
    params = _params(1, 16, rng)
    assert "encoder.beta" not in params
    x = rng.normal(size=(2, 1, 16))
    F = encode_scale(x, params, 0, 1).data
    geo = conv_geometry(16)
    local = lmp_project(x[:, 0], params["encoder.scale0.var0.conv.kernels"],
                        params["encoder.scale0.var0.conv.bias"], geo.stride)
    H = [gta_aggregate(local.data[i], params["encoder.scale0.var0.gru.w_input"],
                       params["encoder.scale0.var0.gru.w_hidden"],
                       params["encoder.scale0.var0.gru.bias"]).data for i in range(2)]
    assert np.array_equal(F, np.stack(H))


def test_beta_initialized_to_one_and_scales_blocks(rng):
    N, d = 3, 3
    params = _params(N, 16, rng, d=d)
    assert params["encoder.beta"].data.tolist() == [1.0, 1.0, 1.0]
    x = rng.normal(size=(2, N, 16))
    base = encode_scale(x, params, 0, N).data
    params["encoder.beta"].data[1] = 2.0
    doubled = encode_scale(x, params, 0, N).data
    assert np.allclose(doubled[:, d:2 * d], 2 * base[:, d:2 * d], rtol=0, atol=1e-15)
    assert np.array_equal(doubled[:, :d], base[:, :d])
    assert np.array_equal(doubled[:, 2 * d:], base[:, 2 * d:])


def test_shape_law_across_scales(rng):
    N, d = 2, 5
    params = {}
    init_encoder(params, rng, N, [64, 32, 16, 8, 4], 4, 8, None, d)
    x = rng.normal(size=(3, N, 64))
    for s, T in enumerate([64, 32, 16, 8, 4]):
        assert encode_scale(x[..., :T], params, s, N).shape == (3, N * d)


def test_channel_independence(rng):
    N, d = 3, 4
    params = _params(N, 32, rng, d=d)
    x = rng.normal(size=(2, N, 32))
    y = x.copy()
    y[:, 2] += rng.normal(size=(2, 32))
    a, b = encode_scale(x, params, 0, N).data, encode_scale(y, params, 0, N).data
    assert np.array_equal(a[:, :2 * d], b[:, :2 * d])
    assert not np.allclose(a[:, 2 * d:], b[:, 2 * d:])


def test_no_lmp_uses_raw_series(rng):
    params = _params(2, 16, rng, use_lmp=False)
    assert not any(".conv." in k for k in params)
    assert params["encoder.scale0.var0.gru.w_input"].shape[0] == 1
    assert encode_scale(rng.normal(size=(2, 2, 16)), params, 0, 2, use_lmp=False).shape == (2, 6)


def test_variable_mismatch(rng):
    params = _params(2, 16, rng)
    with pytest.raises(ConfigurationError):
        encode_scale(rng.normal(size=(2, 3, 16)), params, 0, 3)


def test_beta_gradient_nonzero(rng):
    N = 2
    params = _params(N, 16, rng)
    x = rng.normal(size=(2, N, 16))
    w = rng.normal(size=(2, N * 3))
    beta = params["encoder.beta"]
    err = check_grads(lambda: (encode_scale(x, params, 0, N) * w).sum(), [beta])
    assert err < 1e-6
    assert np.all(np.abs(beta.grad) > 1e-8)
