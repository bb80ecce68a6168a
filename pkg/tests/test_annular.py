import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acnn.annular import (
    ConvKernel,
    annular_conv_backward,
    annular_conv_forward,
    circular_extend,
    conv_backward_fast,
    conv_forward_fast,
    ring_max_pool,
    ring_max_pool_backward,
)
from acnn.errors import InvalidArgument, ShapeError

from oracles import direct_conv


def test_circular_extend_example():
    x = np.arange(4.0)[:, None]
    assert circular_extend(x, 3)[:, 0].tolist() == [0, 1, 2, 3, 0, 1]


def test_circular_extend_too_large():
    with pytest.raises(InvalidArgument):
        circular_extend(np.zeros((2, 1)), 5)


def test_kernel_must_be_odd():
    with pytest.raises(InvalidArgument):
        ConvKernel(np.zeros((2, 1, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        ConvKernel(np.zeros((3, 1, 2)), np.zeros(3))


def test_identity_kernel():
    x = np.random.default_rng(0).normal(size=(5, 2))
    w = np.zeros((3, 2, 2))
    w[0] = np.eye(2)
    out = annular_conv_forward(x, ConvKernel(w, np.zeros(2)))
    assert np.array_equal(out, x)


def test_moving_sum_example():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    out = annular_conv_forward(x, ConvKernel(np.ones((3, 1, 1)), np.zeros(1)))
    assert out[:, 0].tolist() == [6, 9, 8, 7]


def test_matches_direct_convolution():
    rng = np.random.default_rng(1)
    for _ in range(20):
        K, fin, fout = int(rng.integers(3, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        ks = int(rng.choice([1, 3]))
        x = rng.normal(size=(K, fin))
        w, b = rng.normal(size=(ks, fin, fout)), rng.normal(size=fout)
        want = direct_conv(circular_extend(x, ks), w, b)
        assert np.allclose(annular_conv_forward(x, ConvKernel(w, b)), want, atol=1e-12)
        assert np.allclose(conv_forward_fast(x, w, b), want, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_rotation_equivariance_is_bitwise(seed, shift):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(3, 12))
    x = rng.normal(size=(2, K, 3))
    kern = ConvKernel(rng.normal(size=(3, 3, 4)), rng.normal(size=4))
    out = annular_conv_forward(x, kern)
    rolled = annular_conv_forward(np.roll(x, shift, axis=-2), kern)
    assert np.array_equal(rolled, np.roll(out, shift, axis=-2))


def test_fast_and_reference_backward_agree():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 6, 2))
    w, b = rng.normal(size=(3, 2, 5)), rng.normal(size=5)
    g = rng.normal(size=(3, 6, 5))
    ref = annular_conv_backward(x, ConvKernel(w, b), g)
    fast = conv_backward_fast(x, w, g)
    for a, c in zip(ref, fast):
        assert np.allclose(a, c, atol=1e-12)


def test_shape_errors():
    kern = ConvKernel(np.zeros((3, 2, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        annular_conv_forward(np.zeros((4, 3)), kern)
    with pytest.raises(ShapeError):
        annular_conv_backward(np.zeros((4, 2)), kern, np.zeros((4, 2)))


def test_max_pool_and_ties():
    x = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 0.0]])
    pooled, arg = ring_max_pool(x)
    assert pooled.tolist() == [3.0, 5.0] and arg.tolist() == [1, 0]
    g = ring_max_pool_backward(x.shape, arg, np.array([1.0, 2.0]))
    assert g.tolist() == [[0, 2], [1, 0], [0, 0]]


def test_max_pool_permutation_invariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 7, 3))
    assert np.array_equal(ring_max_pool(x)[0], ring_max_pool(x[:, rng.permutation(7)])[0])
