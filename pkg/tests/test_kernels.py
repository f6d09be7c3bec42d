"""Kernel correctness: both implementations against naive oracles and each
other."""

import numpy as np
import pytest

from eegspat import kernels
from eegspat.errors import DimensionError

from oracles import conv2d_bruteforce, maxpool_bruteforce


def test_conv_forward_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(5):
        n, h, w, c_in, kh, kw, n_k = rng.integers(1, 6, size=7)
        h, w = h + kh, w + kw  # keep the valid output non-empty
        x = rng.normal(size=(n, h, w, c_in))
        k = rng.normal(size=(kh, kw, c_in, n_k))
        b = rng.normal(size=n_k)
        ref = conv2d_bruteforce(x, k, b)
        np.testing.assert_allclose(kernels.conv2d_forward(x, k, b), ref, atol=1e-12)
        np.testing.assert_allclose(kernels._conv2d_forward_numpy(x, k, b), ref, atol=1e-12)


def test_conv_row_example():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4, 1)
    k = np.array([1.0, -1.0]).reshape(1, 2, 1, 1)
    out = kernels.conv2d_forward(x, k, np.zeros(1))
    np.testing.assert_array_equal(out.ravel(), [-1.0, -1.0, -1.0])


def test_conv_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 5, 1))
    k = np.ones((1, 1, 1, 1))
    out = kernels.conv2d_forward(x, k, np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_conv_spatial_shape():
    x = np.zeros((2, 64, 350, 1))
    k = np.zeros((64, 1, 1, 10))
    out = kernels.conv2d_forward(x, k, np.zeros(10))
    assert out.shape == (2, 1, 350, 10)


def test_conv_shape_errors_name_axis():
    x = np.zeros((1, 4, 4, 2))
    with pytest.raises(DimensionError, match="height"):
        kernels.conv2d_forward(x, np.zeros((5, 1, 2, 3)), np.zeros(3))
    with pytest.raises(DimensionError, match="width"):
        kernels.conv2d_forward(x, np.zeros((1, 5, 2, 3)), np.zeros(3))
    with pytest.raises(DimensionError, match="channel"):
        kernels.conv2d_forward(x, np.zeros((1, 1, 3, 3)), np.zeros(3))
    with pytest.raises(DimensionError, match="bias"):
        kernels.conv2d_forward(x, np.zeros((1, 1, 2, 3)), np.zeros(4))


def test_conv_backward_paths_agree():
    rng = np.random.default_rng(2)
    cases = [
        ((3, 6, 11, 4), (3, 5, 4, 7)),
        ((2, 8, 9, 2), (8, 1, 2, 5)),  # electrode-spanning kernel
        ((4, 1, 20, 3), (1, 4, 3, 6)),  # time-axis kernel
    ]
    for xs, ks in cases:
        x = rng.normal(size=xs)
        k = rng.normal(size=ks)
        gout = rng.normal(size=(xs[0], xs[1] - ks[0] + 1, xs[2] - ks[1] + 1, ks[3]))
        gx, gk, gb = kernels.conv2d_backward(x, k, gout)
        np.testing.assert_allclose(gx, kernels._conv2d_grad_input_numpy(gout, k), atol=1e-10)
        np.testing.assert_allclose(gk, kernels._conv2d_grad_kernel_numpy(x, gout), atol=1e-10)
        np.testing.assert_allclose(gb, gout.sum(axis=(0, 1, 2)), atol=1e-12)


def test_maxpool_matches_bruteforce():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 17, 4))
    out, arg = kernels.maxpool_forward(x, 3, 3)
    np.testing.assert_array_equal(out, maxpool_bruteforce(x, 3, 3))
    out_np, arg_np = kernels._maxpool_forward_numpy(x, 3, 3)
    np.testing.assert_array_equal(out, out_np)
    np.testing.assert_array_equal(arg, arg_np)


def test_maxpool_examples():
    row = np.array([3.0, 1.0, 2.0, 5.0, 4.0, 0.0]).reshape(1, 1, 6, 1)
    out, arg = kernels.maxpool_forward(row)
    np.testing.assert_array_equal(out.ravel(), [3.0, 5.0])
    np.testing.assert_array_equal(arg.ravel(), [0, 3])
    const = np.full((1, 2, 9, 3), 1.25)
    out, _ = kernels.maxpool_forward(const)
    assert (out == 1.25).all()
    assert kernels.maxpool_forward(np.zeros((1, 1, 341, 25)))[0].shape == (1, 1, 113, 25)


def test_maxpool_width_error():
    with pytest.raises(DimensionError):
        kernels.maxpool_forward(np.zeros((1, 1, 2, 1)), 3, 3)


def test_maxpool_backward_routes_to_argmax():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 2, 9, 3))
    out, arg = kernels.maxpool_forward(x)
    gout = rng.normal(size=out.shape)
    gx = kernels.maxpool_backward(gout, arg, x.shape[2])
    assert gx.shape == x.shape
    # each pooled gradient lands exactly on its argmax position
    total_in = gx.sum()
    np.testing.assert_allclose(total_in, gout.sum(), atol=1e-12)
    nonzero = np.nonzero(gx)
    assert set(zip(*[axis.tolist() for axis in nonzero])) <= {
        (n, i, int(arg[n, i, j, f]), f)
        for n in range(2)
        for i in range(2)
        for j in range(out.shape[2])
        for f in range(3)
    }


def test_enet_single_feature_closed_form():
    xt = np.array([[1.0, 0.0]])
    y = np.array([2.0, 0.0])
    beta, _, converged = kernels.enet_coordinate_descent(xt, y, 2.0, 1.0, 1e-12, 1000)
    assert converged
    np.testing.assert_allclose(beta, [0.5], atol=1e-12)


def test_enet_numpy_and_dispatch_agree():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 8))
    y = rng.normal(size=30)
    beta1, _, _ = kernels.enet_coordinate_descent(x.T, y, 0.5, 0.3, 1e-10, 10000)
    xt = np.ascontiguousarray(x.T)
    beta2 = np.zeros(8)
    r = y.copy()
    col_ss = (xt * xt).sum(axis=1)
    for _ in range(10000):
        if kernels._enet_sweep_numpy(xt, r, beta2, col_ss, 0.5, 0.3) < 1e-10:
            break
    np.testing.assert_allclose(beta1, beta2, atol=1e-8)
