import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revmark import numerics as nx
from revmark.errors import ShapeMismatch
from revmark.subnets import (SubnetConfig, blocks_for, downsample_forward, init_subnet,
                             spatial_attention, upsample_forward)


def _zero(p):
    for _, v in p.named():
        v.value[...] = 0.0
    return p


def test_attention_zero_gate_halves():
    x = np.random.default_rng(0).normal(size=(2, 3, 6, 6))
    att = (np.zeros((1, 2, 7, 7)), np.zeros(1))
    assert np.array_equal(spatial_attention(x, att).value, 0.5 * x)


def test_attention_saturated_gate_passes():
    x = np.random.default_rng(1).normal(size=(1, 4, 5, 5))
    att = (np.zeros((1, 2, 7, 7)), np.array([50.0]))
    assert np.allclose(spatial_attention(x, att).value, x, rtol=0, atol=1e-10)


def test_attention_ratio_constant_across_channels():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 4, 6, 6)) + 3.0
    att = (rng.normal(size=(1, 2, 7, 7)), rng.normal(size=1))
    ratio = spatial_attention(x, att).value / x
    assert np.allclose(ratio, ratio[:, :1], rtol=1e-13)
    assert np.all((ratio > 0) & (ratio < 1))


def test_attention_gradient():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 3, 5, 5))
    b = rng.normal(size=1)
    err = nx.grad_check(lambda w: nx.sum_all(spatial_attention(x, (w, b)) * x), rng.normal(size=(1, 2, 7, 7)) * 0.1)
    assert err < 1e-4
    err = nx.grad_check(lambda v: nx.mse(spatial_attention(v, (np.ones((1, 2, 7, 7)) * 0.05, b))), x)
    assert err < 1e-4


def test_down_shape_and_channel_plan():
    cfg = SubnetConfig(n_feat=16, n_blocks=blocks_for(32, 8), direction="down", in_channels=1, out_channels=1)
    assert cfg.n_blocks == 2
    assert cfg.channel_plan() == [16, 32, 48]
    p = init_subnet(cfg, np.random.default_rng(0), zero_final=False)
    assert [blk["resample"][0].shape[0] for blk in p.blocks] == [32, 48]
    assert p.final[0].shape == (1, 48, 3, 3)
    out = downsample_forward(np.random.default_rng(1).uniform(0, 255, (1, 1, 32, 32)), p, cfg)
    assert out.shape == (1, 1, 8, 8)


def test_up_shape():
    cfg = SubnetConfig(n_feat=8, n_blocks=2, direction="up", in_channels=1, out_channels=3)
    assert cfg.channel_plan() == [24, 16, 8]
    p = init_subnet(cfg, np.random.default_rng(0), zero_final=False)
    assert upsample_forward(np.ones((1, 1, 8, 8)), p, cfg).shape == (1, 3, 32, 32)


def test_zero_params_zero_output():
    rng = np.random.default_rng(4)
    for direction, inp, c_in in (("down", rng.normal(size=(1, 1, 16, 16)), 1), ("up", rng.normal(size=(1, 1, 4, 4)), 1)):
        cfg = SubnetConfig(8, 2, direction, c_in, 1)
        out = (downsample_forward if direction == "down" else upsample_forward)(
            inp, _zero(init_subnet(cfg, rng)), cfg)
        assert np.array_equal(out.value, np.zeros_like(out.value))


def test_zero_final_default():
    p = init_subnet(SubnetConfig(4, 1, "down", 1, 1), np.random.default_rng(0))
    assert not np.any(p.final[0].value) and not np.any(p.final[1].value)


def test_bad_shapes():
    cfg = SubnetConfig(4, 2, "down", 1, 1)
    p = init_subnet(cfg, np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        downsample_forward(np.ones((1, 3, 16, 16)), p, cfg)
    with pytest.raises(ShapeMismatch):
        downsample_forward(np.ones((1, 1, 10, 10)), p, cfg)
    with pytest.raises(ShapeMismatch):
        blocks_for(24, 8)
    with pytest.raises(ValueError):
        upsample_forward(np.ones((1, 1, 4, 4)), p, cfg)
    with pytest.raises(ValueError):
        SubnetConfig(0, 1, "down", 1, 1)


@settings(max_examples=8, deadline=None)
@given(hl=st.sampled_from([(16, 4), (32, 8), (64, 8), (64, 16)]), c=st.sampled_from([1, 3]),
       seed=st.integers(0, 1000))
def test_shape_roundtrip_and_finite(hl, c, seed):
    h, l = hl
    nb = blocks_for(h, l)
    rng = np.random.default_rng(seed)
    up = SubnetConfig(4, nb, "up", 1, c)
    down = SubnetConfig(4, nb, "down", c, 1, in_shift=127.5, in_scale=1 / 127.5)
    u = upsample_forward(rng.choice([-1.0, 1.0], size=(1, 1, l, l)), init_subnet(up, rng, False), up)
    assert u.shape == (1, c, h, h)
    big = rng.uniform(-1e4, 1e4, size=(1, c, h, h))
    d = downsample_forward(big, init_subnet(down, rng, False), down)
    assert d.shape == (1, 1, l, l)
    assert np.all(np.isfinite(d.value)) and np.all(np.isfinite(u.value))
    assert downsample_forward(u, init_subnet(down, rng, False), down).shape == (1, 1, l, l)
