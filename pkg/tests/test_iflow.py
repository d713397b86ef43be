import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revmark import numerics as nx
from revmark.errors import CheckpointError, InexactDivision, LengthMismatch, NumericOverflow, ShapeMismatch
from revmark.iflow import (Geometry, bits_to_map, coupling_forward, coupling_inverse, init_iiwn,
                           iiwn_forward, iiwn_inverse, load_checkpoint, map_to_bits, save_checkpoint)

from helpers import randomized

SMALL = Geometry(8, 8, 1, 2, 1, 2)


def constant_layer(u=0.0, s=-10.0, q=0.0, geo=SMALL):
    """Zero-weight subnets whose outputs are the constant final biases."""
    theta = init_iiwn(geo, seed=0)
    layer = theta.layers[0]
    for key, val in (("U", u), ("S", s), ("Q", q)):
        for _, v in getattr(layer, key).named():
            v.value[...] = 0.0
        getattr(layer, key).final[1].value[...] = val
    return theta, layer


def test_bits_to_map_examples():
    assert np.array_equal(bits_to_map([0, 1, 1, 0]), [[[-1, 1], [1, -1]]])
    assert np.array_equal(bits_to_map(np.zeros(16)), -np.ones((1, 4, 4)))
    with pytest.raises(LengthMismatch):
        bits_to_map([0, 1, 1])


def test_map_to_bits_examples():
    assert list(map_to_bits([[[-0.2, 3.7], [0.0, -9.1]]])) == [0, 1, 1, 0]
    b = np.random.default_rng(0).integers(0, 2, 64)
    assert np.array_equal(map_to_bits(bits_to_map(b)), b)
    m = np.random.default_rng(1).normal(size=(1, 8, 8))
    assert list(map_to_bits(m)) == [1 if v >= 0 else 0 for v in m.ravel()]


def test_coupling_identity_example():
    theta, layer = constant_layer(0.0, -10.0, 0.0)
    r1, r2 = np.full((1, 8, 8), 5), np.full((1, 2, 2), 3)
    s1, s2 = coupling_forward(r1, r2, layer, SMALL)
    assert np.array_equal(s1, r1) and np.array_equal(s2, r2)


def test_coupling_hand_example_and_inverse():
    theta, layer = constant_layer(0.4, 0.0, 2.6)
    r1, r2 = np.full((1, 8, 8), 5), np.full((1, 2, 2), 3)
    s1, s2 = coupling_forward(r1, r2, layer, SMALL)
    assert np.all(s1 == 5) and np.all(s2 == 9)
    b1, b2 = coupling_inverse(s1, s2, layer, SMALL)
    assert np.all(b1 == 5) and np.all(b2 == 3)


def test_factor_range_sweep():
    v = np.linspace(-40, 40, 800_001)
    f = nx.round_half_away(np.exp(1 / (1 + np.exp(-v))))
    assert set(np.unique(f)) == {1.0, 2.0, 3.0}
    # boundaries: exp(sigmoid(v)) = 1.5 and 2.5
    lo, hi = -math.log(1 / math.log(1.5) - 1), -math.log(1 / math.log(2.5) - 1)
    assert f[np.searchsorted(v, lo) - 1] == 1 and f[np.searchsorted(v, lo) + 1] == 2
    assert f[np.searchsorted(v, hi) - 1] == 2 and f[np.searchsorted(v, hi) + 1] == 3


def test_coupling_roundtrip_1000_pairs():
    geo = Geometry(8, 8, 1, 2, 1, 2)
    rng = np.random.default_rng(2)
    for t in range(10):
        layer = randomized(geo, t).layers[0]
        r1 = rng.integers(-300, 300, size=(100, 1, 8, 8))
        r2 = rng.integers(-50, 50, size=(100, 1, 2, 2))
        s1, s2 = coupling_forward(r1, r2, layer, geo)
        b1, b2 = coupling_inverse(s1, s2, layer, geo)
        assert np.array_equal(b1, r1) and np.array_equal(b2, r2)


def test_inverse_detects_modification():
    geo = Geometry(8, 8, 1, 2, 1, 2)
    theta, layer = constant_layer(0.0, 0.0, 0.0, geo)  # factor 2 everywhere
    s1, s2 = coupling_forward(np.full((1, 8, 8), 5), np.full((1, 2, 2), 3), layer, geo)
    s2 = s2.copy()
    s2[0, 0, 0] += 1
    with pytest.raises(InexactDivision):
        coupling_inverse(s1, s2, layer, geo)
    r1, r2 = coupling_inverse(s1, s2, layer, geo, exact=False)
    assert r2[0, 0, 0] == 3.5


def test_identity_at_init():
    geo = Geometry(32, 32, 1, 8, 2, 8)
    theta = init_iiwn(geo, seed=3)
    rng = np.random.default_rng(3)
    cover = rng.integers(0, 256, size=(1, 32, 32))
    wm = bits_to_map(rng.integers(0, 2, 64))
    stego, z = iiwn_forward(cover, wm, theta)
    assert np.array_equal(stego, cover) and np.array_equal(z, wm)


def test_single_layer_matches_coupling():
    geo = Geometry(16, 16, 1, 4, 1, 4)
    theta = randomized(geo, 4)
    rng = np.random.default_rng(4)
    cover, wm = rng.integers(0, 256, (1, 16, 16)), bits_to_map(rng.integers(0, 2, 16))
    a = iiwn_forward(cover, wm, theta)
    b = coupling_forward(cover, wm, theta.layers[0], geo)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.parametrize("geo", [Geometry(16, 16, 1, 4, 4, 4), Geometry(16, 16, 3, 4, 2, 4)])
def test_lossless_roundtrip(geo):
    for t in range(8):
        theta = randomized(geo, 10 + t)
        rng = np.random.default_rng(t)
        cover = rng.integers(0, 256, size=geo.image_shape)
        bits = rng.integers(0, 2, geo.n_bits)
        stego, z = iiwn_forward(cover, bits_to_map(bits), theta)
        again = iiwn_forward(cover, bits_to_map(bits), theta)
        assert np.array_equal(stego, again[0]) and np.array_equal(z, again[1])
        rec, m = iiwn_inverse(stego, z, theta)
        assert np.array_equal(rec, cover) and np.array_equal(map_to_bits(m), bits)
        rec2, m2 = iiwn_inverse(stego, z, theta, exact=False)
        assert np.array_equal(rec2, rec) and np.array_equal(m2, m)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.05, 3.0))
def test_invertibility_property(seed, scale):
    geo = Geometry(16, 16, 1, 4, 2, 4)
    theta = randomized(geo, seed, scale)
    rng = np.random.default_rng(seed)
    cover = rng.integers(0, 256, size=geo.image_shape)
    bits = rng.integers(0, 2, geo.n_bits)
    stego, z = iiwn_forward(cover, bits_to_map(bits), theta)
    rec, m = iiwn_inverse(stego, z, theta)
    assert np.array_equal(rec, cover) and np.array_equal(map_to_bits(m), bits)


def test_input_validation():
    theta = init_iiwn(SMALL)
    with pytest.raises(ShapeMismatch):
        iiwn_forward(np.zeros((1, 4, 4), int), bits_to_map([0, 1, 1, 0]), theta)
    with pytest.raises(ValueError):
        iiwn_forward(np.full((1, 8, 8), 256), bits_to_map([0, 1, 1, 0]), theta)
    with pytest.raises(InexactDivision):
        iiwn_inverse(np.full((1, 8, 8), 0.5), np.ones((1, 2, 2)), theta)
    with pytest.raises(ShapeMismatch):
        Geometry(8, 8, 1, 3)


def test_numeric_overflow():
    theta, layer = constant_layer(2.0**51, -10.0, 0.0)
    with pytest.raises(NumericOverflow):
        iiwn_forward(np.zeros((1, 8, 8), int), bits_to_map([0, 1, 1, 0]), theta)


def test_checkpoint_roundtrip(tmp_path):
    geo = Geometry(16, 16, 3, 4, 2, 4)
    theta = randomized(geo, 5)
    path = tmp_path / "m.iiwn"
    save_checkpoint(theta, path)
    back = load_checkpoint(path)
    assert back.geometry == geo
    for (na, a), (nb, b) in zip(theta.named(), back.named()):
        assert na == nb and a.value.tobytes() == b.value.tobytes()
    assert path.read_bytes()[:4] == b"IIWN"


def test_checkpoint_corruption(tmp_path):
    buf = io.BytesIO()
    save_checkpoint(randomized(SMALL, 6), buf)
    raw = bytearray(buf.getvalue())
    for pos in (0, len(raw) // 2, len(raw) - 1):
        bad = bytearray(raw)
        bad[pos] ^= 0x01
        with pytest.raises(CheckpointError):
            load_checkpoint(io.BytesIO(bytes(bad)))
    with pytest.raises(CheckpointError):
        load_checkpoint(io.BytesIO(bytes(raw[:-5])))
