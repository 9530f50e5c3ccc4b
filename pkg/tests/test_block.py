import cmath

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relpv.basis import FREQUENCY_SIGNS, build_basis
from relpv.block import (LAYER2, RelpvBlockParams, layer2_stft_direct, layer2_stft_separable,
                         relpv_backward, relpv_forward, relpv_param_count)
from relpv.errors import DimensionError

from helpers import fd_check


def scalar_stft(vol, n, stride=1):
    """Loop oracle: F(v, x) = sum_y f(x - y) exp(-2j pi v.y), zero outside the volume."""
    d, h, w = vol.shape
    r = n // 2
    outs = [(-(-L // stride)) for L in vol.shape]
    out = np.zeros((26,) + tuple(outs))
    for i, signs in enumerate(FREQUENCY_SIGNS):
        for p in np.ndindex(*outs):
            x = [c * stride for c in p]
            acc = 0j
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    for c in range(-r, r + 1):
                        z, yy, xx = x[0] - a, x[1] - b, x[2] - c
                        if 0 <= z < d and 0 <= yy < h and 0 <= xx < w:
                            phase = (signs[0] * a + signs[1] * b + signs[2] * c) / n
                            acc += vol[z, yy, xx] * cmath.exp(-2j * cmath.pi * phase)
            out[(2 * i,) + p] = acc.real
            out[(2 * i + 1,) + p] = acc.imag
    return out


@pytest.mark.parametrize("n,stride", [(3, 1), (3, 2), (5, 1), (5, 3)])
@pytest.mark.parametrize("route", ["direct", "separable"])
def test_layer2_matches_loop_oracle(n, stride, route):
    vol = np.random.default_rng(n * 10 + stride).standard_normal((5, 4, 6))
    got = LAYER2[route][0](vol[None], build_basis(n), stride)
    assert np.abs(got - scalar_stft(vol, n, stride)).max() < 1e-10


def test_reflection_distinguishes_gather():
    # an off-centre impulse tells f(x - y) apart from f(x + y): the imaginary part flips sign
    vol = np.zeros((5, 5, 5))
    vol[2, 2, 3] = 1.0
    out = layer2_stft_direct(vol[None], build_basis(3))
    # at x = (2,2,2) only y = x - (2,2,3) = (0,0,-1) contributes; v13 = (0,0,1/3)
    v13 = 12
    z = cmath.exp(-2j * cmath.pi * (-1) / 3)
    assert out[2 * v13, 2, 2, 2] == pytest.approx(z.real)
    assert out[2 * v13 + 1, 2, 2, 2] == pytest.approx(z.imag)


def test_impulse_and_constant():
    vol = np.zeros((1, 5, 5, 5))
    vol[0, 2, 2, 2] = 1
    for fwd, _ in LAYER2.values():
        out = fwd(vol, build_basis(3))
        assert np.allclose(out[0::2, 2, 2, 2], 1) and np.allclose(out[1::2, 2, 2, 2], 0, atol=1e-15)
    for n in (3, 5, 7, 9):
        c = np.full((1, n + 2, n + 1, n + 3), -1.7)
        for fwd, _ in LAYER2.values():
            assert np.abs(fwd(c, build_basis(n), padding="valid")).max() < 1e-10


@pytest.mark.parametrize("n", [3, 5, 7, 9])
@pytest.mark.parametrize("stride", [1, 2])
def test_routes_agree(n, stride):
    rng = np.random.default_rng(n + stride)
    x = rng.standard_normal((2, 1, 9, 10, 11))
    b = build_basis(n)
    d = layer2_stft_direct(x, b, stride)
    s = layer2_stft_separable(x, b, stride)
    assert d.shape == s.shape
    assert np.abs(d - s).max() < 1e-10


def test_routes_agree_f32():
    x = np.random.default_rng(13).standard_normal((1, 6, 6, 6)).astype(np.float32)
    b = build_basis(3)
    d, s = layer2_stft_direct(x, b), layer2_stft_separable(x, b)
    assert d.dtype == s.dtype == np.float32
    assert np.abs(d - s).max() <= 1e-5


@pytest.mark.parametrize("route", ["direct", "separable"])
@pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid"), (2, "valid")])
def test_adjoint_identity(route, stride, padding):
    rng = np.random.default_rng(11)
    fwd, adj = LAYER2[route]
    b = build_basis(3)
    x = rng.standard_normal((1, 7, 6, 8))
    y = fwd(x, b, stride, padding)
    g = rng.standard_normal(y.shape)
    lhs = float((y * g).sum())
    rhs = float((x * adj(g, b, x.shape[-3:], stride, padding)).sum())
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_multichannel_input_rejected():
    with pytest.raises(DimensionError):
        layer2_stft_direct(np.zeros((2, 4, 4, 4)), build_basis(3))


@settings(max_examples=20, deadline=None)
@given(st.floats(-4, 4), st.integers(0, 2 ** 31))
def test_separable_is_linear(alpha, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 5, 5, 5))
    b = build_basis(3)
    assert np.allclose(layer2_stft_separable(alpha * x, b), alpha * layer2_stft_separable(x, b), atol=1e-10)
    assert np.all(layer2_stft_separable(0 * x, b) == 0)


def test_block_shapes_and_trivial_cases():
    p = RelpvBlockParams.init(4, 3, 16, seed=0)
    x = np.random.default_rng(0).standard_normal((4, 8, 8, 8))
    out, cache = relpv_forward(x, p)
    assert out.shape == (16, 8, 8, 8) and cache["a"].shape == (26, 8, 8, 8)
    p.w4[:] = 0
    assert np.all(relpv_forward(x, p)[0] == 0)
    # constant input: STFT vanishes away from the zero-padded border, leaving the Layer-4 bias
    p = RelpvBlockParams.init(4, 3, 5, seed=1, padding="valid")
    p.b4[:] = np.arange(5)
    out, _ = relpv_forward(np.full((4, 6, 6, 6), 2.0), p)
    assert np.allclose(out, np.arange(5)[:, None, None, None], atol=1e-12)
    with pytest.raises(DimensionError):
        relpv_forward(np.zeros((3, 4, 4, 4)), RelpvBlockParams.init(4, 3, 2))


@pytest.mark.parametrize("route", ["direct", "separable"])
@pytest.mark.parametrize("stride", [1, 2])
def test_block_gradients_fd(route, stride):
    rng = np.random.default_rng(12)
    p = RelpvBlockParams.init(2, 3, 3, stride=stride, seed=3)
    p.b1[:] = 0.1
    x = rng.standard_normal((2, 4, 4, 4))
    out, cache = relpv_forward(x, p, route)
    g = rng.standard_normal(out.shape)
    gx, grads = relpv_backward(g, cache)

    def loss():
        return float((relpv_forward(x, p, route)[0] * g).sum())

    fd_check(loss, [(x, gx), (p.w1, grads["w1"]), (p.b1, grads["b1"]), (p.w4, grads["w4"]),
                    (p.b4, grads["b4"])], rng)


def test_block_backward_zero_and_mismatch():
    p = RelpvBlockParams.init(2, 3, 3)
    out, cache = relpv_forward(np.ones((2, 4, 4, 4)), p)
    gx, grads = relpv_backward(np.zeros_like(out), cache)
    assert not gx.any() and not any(v.any() for v in grads.values())
    with pytest.raises(DimensionError):
        relpv_backward(np.zeros((4, 4, 4, 4)), cache)


def test_param_count_examples():
    assert relpv_param_count(27, 27) == 729
    assert 27 * 27 * 27 == 19683 and 19683 // relpv_param_count(27, 27) == 27
    assert relpv_param_count(3, 64) == 1667
    assert relpv_param_count(1, 1) == 27
    assert relpv_param_count(3, 64, with_bias=True) == 1667 + 1 + 64
    p = RelpvBlockParams.init(3, 7, 64)
    assert sum(a.size for a in p.trainable().values()) == relpv_param_count(3, 64, True)
