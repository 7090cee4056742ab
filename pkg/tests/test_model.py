import numpy as np
import pytest

from dismsts.errors import ConfigurationError, DepthError, StateError
from dismsts.model import DisMSTS, ModelConfig


def cfg(**kw):
    base = dict(n_vars=2, length=32, n_classes=3, S=2, channels=4, hidden=4)
    base.update(kw)
    return ModelConfig(**base)


def test_head_widths():
    assert DisMSTS(cfg()).params["head.fc1.weight"].shape == (4 * 8, 8)
    assert DisMSTS(cfg(S=0)).params["head.fc1.weight"].shape == (2 * 8, 8)
    assert DisMSTS(cfg(variant="swf-mean")).params["head.fc1.weight"].shape == (8, 8)


def test_forward_shapes(rng):
    out = DisMSTS(cfg()).forward(rng.normal(size=(5, 2, 32)))
    assert out.logits.shape == (5, 3)
    assert [r.shape for r in out.reps] == [(5, 8)] * 3
    assert len(out.shared) == len(out.specific) == 3


def test_swf_mean_has_no_disentangler(rng):
    m = DisMSTS(cfg(variant="swf-mean"))
    assert not any(k.startswith("disentangle.") for k in m.params)
    br, out = m.loss(rng.normal(size=(4, 2, 32)), [0, 1, 2, 0], 0.05, 0.05)
    assert out.shared is None and br.sim_loss is None and br.dis_loss is None
    assert br.as_dict()["sim_loss"] is None and br.total is br.class_loss


def test_no_lmp_differs_only_by_conv_entries():
    full = DisMSTS(cfg()).params
    raw = DisMSTS(cfg(variant="no-lmp")).params
    diff = set(full) ^ set(raw)
    assert diff and all(".conv." in k for k in diff)
    assert all(".conv." not in k for k in raw)


def test_depth_error_reports_max():
    with pytest.raises(DepthError) as info:
        cfg(length=16, S=6)
    assert info.value.max_depth == 4


def test_bad_variant_and_input(rng):
    with pytest.raises(ConfigurationError):
        cfg(variant="other")
    with pytest.raises(ConfigurationError):
        DisMSTS(cfg()).forward(rng.normal(size=(2, 3, 32)))


def test_state_round_trip(tmp_path, rng):
    a, b = DisMSTS(cfg(), seed=1), DisMSTS(cfg(), seed=2)
    x = rng.normal(size=(3, 2, 32))
    a.save(tmp_path / "m.ckpt")
    b.load(tmp_path / "m.ckpt")
    assert np.array_equal(a.logits(x), b.logits(x))


def test_state_mismatch(rng):
    m = DisMSTS(cfg())
    with pytest.raises(StateError):
        m.load_state_dict(DisMSTS(cfg(variant="no-lmp")).state_dict())
    state = m.state_dict()
    state["encoder.beta"] = np.ones(5)
    with pytest.raises(StateError, match="encoder.beta"):
        m.load_state_dict(state)


def test_batched_logits_match_single_pass(rng):
    m = DisMSTS(cfg())
    x = rng.normal(size=(7, 2, 32))
    assert np.allclose(m.logits(x, batch_size=3), m.logits(x), rtol=0, atol=1e-13)


def test_describe():
    d = DisMSTS(cfg()).describe()
    assert d["scale_lengths"] == [32, 16, 8]
    assert [c["length"] for c in d["conv"]] == [7, 3, 1]
