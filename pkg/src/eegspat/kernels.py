"""Hot numeric kernels: 2-D valid cross-correlation, max pooling, and the
elastic-net coordinate-descent sweep.

Each kernel has two implementations with identical arithmetic:

* ``*_loops`` — explicit loops, compiled with numba when the accelerated
  path is active (see :mod:`eegspat.accel`);
* ``*_numpy`` — vectorized pure-numpy fallback.

Public entry points dispatch on :data:`eegspat.accel.USE_NUMBA`.  All arrays
are float64 and C-contiguous; wrappers enforce this so the compiled
signatures stay monomorphic.

Layout conventions: activations are (N, H, W, C) with N the batch axis,
kernels are (kh, kw, Cin, K).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .accel import USE_NUMBA, njit
from .errors import DimensionError


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# convolution (valid cross-correlation, stride 1, no kernel flip)
# ---------------------------------------------------------------------------


@njit
def _conv2d_forward_loops(x, k, bias, out):
    n_batch, _, _, c_in = x.shape
    kh, kw, _, n_k = k.shape
    h_out, w_out = out.shape[1], out.shape[2]
    for n in range(n_batch):
        for i in range(h_out):
            for j in range(w_out):
                for f in range(n_k):
                    out[n, i, j, f] = bias[f]
                for a in range(kh):
                    for b in range(kw):
                        for c in range(c_in):
                            xv = x[n, i + a, j + b, c]
                            for f in range(n_k):
                                out[n, i, j, f] += xv * k[a, b, c, f]
    return out


@njit
def _conv2d_grad_kernel_loops(x, gout, gk):
    n_batch = x.shape[0]
    kh, kw, c_in, n_k = gk.shape
    h_out, w_out = gout.shape[1], gout.shape[2]
    for n in range(n_batch):
        for i in range(h_out):
            for j in range(w_out):
                for a in range(kh):
                    for b in range(kw):
                        for c in range(c_in):
                            xv = x[n, i + a, j + b, c]
                            for f in range(n_k):
                                gk[a, b, c, f] += xv * gout[n, i, j, f]
    return gk


def _rotated_kernel(k):
    """Kernel flipped on both spatial axes with the channel axes swapped,
    so the input gradient becomes a forward pass over the padded upstream
    gradient."""
    return np.ascontiguousarray(k[::-1, ::-1].transpose(0, 1, 3, 2))


def _conv2d_forward_numpy(x, k, bias):
    kh, kw, c_in, n_k = k.shape
    n = x.shape[0]
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (N,Ho,Wo,Cin,kh,kw)
    h_out, w_out = win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h_out * w_out, kh * kw * c_in)
    out = cols @ k.reshape(kh * kw * c_in, n_k)
    return out.reshape(n, h_out, w_out, n_k) + bias


def _conv2d_grad_kernel_numpy(x, gout):
    kh = x.shape[1] - gout.shape[1] + 1
    kw = x.shape[2] - gout.shape[2] + 1
    h_out, w_out = gout.shape[1], gout.shape[2]
    # windows indexed by kernel offset: (N, kh, kw, Cin, Ho, Wo)
    win = sliding_window_view(x, (h_out, w_out), axis=(1, 2))
    assert win.shape[1] == kh and win.shape[2] == kw
    return np.einsum("nabcij,nijf->abcf", win, gout, optimize=True)


def _conv2d_grad_input_numpy(gout, k):
    kh, kw = k.shape[0], k.shape[1]
    gp = np.pad(gout, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    return _conv2d_forward_numpy(gp, _rotated_kernel(k), np.zeros(k.shape[2]))


def conv2d_forward(x, k, bias):
    """Valid cross-correlation of a batch ``x`` with ``k``, plus bias.

    x: (N, H, W, Cin); k: (kh, kw, Cin, K); bias: (K,).
    Returns (N, H-kh+1, W-kw+1, K).
    """
    x, k, bias = _c(x), _c(k), _c(bias)
    n, h, w, c_in = x.shape
    kh, kw, kc, n_k = k.shape
    if kc != c_in:
        raise DimensionError(
            f"kernel channel axis {kc} does not match input channel axis {c_in}"
        )
    if kh > h:
        raise DimensionError(f"kernel height {kh} exceeds input height {h}")
    if kw > w:
        raise DimensionError(f"kernel width {kw} exceeds input width {w}")
    if bias.shape != (n_k,):
        raise DimensionError(
            f"bias length {bias.shape} does not match filter count {n_k}"
        )
    if USE_NUMBA:
        out = np.empty((n, h - kh + 1, w - kw + 1, n_k))
        return _conv2d_forward_loops(x, k, bias, out)
    return _conv2d_forward_numpy(x, k, bias)


def conv2d_backward(x, k, gout):
    """Gradients of the valid cross-correlation.

    Returns (gx, gk, gbias) with the shapes of x, k, and the bias.
    """
    x, k, gout = _c(x), _c(k), _c(gout)
    gbias = gout.sum(axis=(0, 1, 2))
    kh, kw = k.shape[0], k.shape[1]
    if USE_NUMBA:
        gk = np.zeros_like(k)
        _conv2d_grad_kernel_loops(x, gout, gk)
    else:
        gk = _conv2d_grad_kernel_numpy(x, gout)
    if kh == x.shape[1] and kw == 1:
        # electrode-spanning kernel: the output height is 1, so the input
        # gradient is a plain contraction over the filter axis (padding the
        # height axis for full correlation would cost kh times extra work)
        gx = np.tensordot(gout[:, 0], k[:, 0], axes=([2], [2]))  # (N,W,kh,Cin)
        return np.ascontiguousarray(gx.transpose(0, 2, 1, 3)), gk, gbias
    if USE_NUMBA:
        gp = np.pad(gout, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        gx = np.empty_like(x)
        _conv2d_forward_loops(gp, _rotated_kernel(k), np.zeros(k.shape[2]), gx)
        return gx, gk, gbias
    return _conv2d_grad_input_numpy(gout, k), gk, gbias


# ---------------------------------------------------------------------------
# max pooling along the time axis (axis 2), valid, floor semantics
# ---------------------------------------------------------------------------


@njit
def _maxpool_forward_loops(x, pool_w, stride, out, arg):
    n_batch, h, _, n_k = x.shape
    w_out = out.shape[2]
    for n in range(n_batch):
        for i in range(h):
            for j in range(w_out):
                j0 = j * stride
                for f in range(n_k):
                    best = x[n, i, j0, f]
                    bidx = j0
                    for d in range(1, pool_w):
                        v = x[n, i, j0 + d, f]
                        if v > best:
                            best = v
                            bidx = j0 + d
                    out[n, i, j, f] = best
                    arg[n, i, j, f] = bidx
    return out


def _maxpool_forward_numpy(x, pool_w, stride):
    win = sliding_window_view(x, pool_w, axis=2)[:, :, ::stride]  # (N,H,Wo,K,pw)
    out = win.max(axis=-1)
    arg = win.argmax(axis=-1)
    w_out = out.shape[2]
    arg = arg + np.arange(w_out).reshape(1, 1, w_out, 1) * stride
    return out, arg.astype(np.int64)


@njit
def _maxpool_backward_loops(gout, arg, gx):
    n_batch, h, w_out, n_k = gout.shape
    for n in range(n_batch):
        for i in range(h):
            for j in range(w_out):
                for f in range(n_k):
                    gx[n, i, arg[n, i, j, f], f] += gout[n, i, j, f]
    return gx


def maxpool_forward(x, pool_w=3, stride=3):
    """Window maximum along the time axis with argmax indices for backward.

    Trailing columns that do not fill a window are dropped (floor semantics).
    Returns (out, argmax) where argmax holds absolute time indices into x.
    """
    x = _c(x)
    w = x.shape[2]
    if w < pool_w:
        raise DimensionError(f"time axis extent {w} shorter than pool width {pool_w}")
    w_out = (w - pool_w) // stride + 1
    if USE_NUMBA:
        out = np.empty((x.shape[0], x.shape[1], w_out, x.shape[3]))
        arg = np.empty(out.shape, dtype=np.int64)
        _maxpool_forward_loops(x, pool_w, stride, out, arg)
        return out, arg
    return _maxpool_forward_numpy(x, pool_w, stride)


def maxpool_backward(gout, arg, in_width):
    """Route pooled gradients back to the argmax positions."""
    gout = _c(gout)
    gx = np.zeros(gout.shape[:2] + (in_width,) + gout.shape[3:])
    if USE_NUMBA:
        return _maxpool_backward_loops(gout, arg, gx)
    n, h, w_out, n_k = gout.shape
    ni, hi, _, ki = np.ogrid[:n, :h, :w_out, :n_k]
    np.add.at(gx, (ni, hi, arg, ki), gout)
    return gx


# ---------------------------------------------------------------------------
# elastic-net cyclic coordinate descent
# ---------------------------------------------------------------------------


@njit
def _enet_sweep_loops(xt, r, beta, col_ss, lam1, lam2):
    p = xt.shape[0]
    half_l1 = 0.5 * lam1
    max_delta = 0.0
    for j in range(p):
        denom = col_ss[j] + lam2
        if denom <= 0.0:
            continue
        rho = np.dot(xt[j], r) + col_ss[j] * beta[j]
        if rho > half_l1:
            b_new = (rho - half_l1) / denom
        elif rho < -half_l1:
            b_new = (rho + half_l1) / denom
        else:
            b_new = 0.0
        d = b_new - beta[j]
        if d != 0.0:
            r -= d * xt[j]
            beta[j] = b_new
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


def _enet_sweep_numpy(xt, r, beta, col_ss, lam1, lam2):
    half_l1 = 0.5 * lam1
    max_delta = 0.0
    for j in range(xt.shape[0]):
        denom = col_ss[j] + lam2
        if denom <= 0.0:
            continue
        rho = xt[j] @ r + col_ss[j] * beta[j]
        b_new = np.sign(rho) * max(abs(rho) - half_l1, 0.0) / denom
        d = b_new - beta[j]
        if d != 0.0:
            r -= d * xt[j]
            beta[j] = b_new
            max_delta = max(max_delta, abs(d))
    return max_delta


def enet_coordinate_descent(xt, y, lam1, lam2, tol, max_sweeps, beta0=None):
    """Cyclic coordinate descent for the unscaled elastic-net objective.

    xt is the design matrix transposed to (p, n) so each coordinate reads a
    contiguous row.  Returns (beta, n_sweeps, converged).
    """
    xt = _c(xt)
    y = _c(y)
    p = xt.shape[0]
    beta = np.zeros(p) if beta0 is None else _c(beta0).copy()
    r = y - beta @ xt
    col_ss = np.einsum("jn,jn->j", xt, xt)
    sweep = _enet_sweep_loops if USE_NUMBA else _enet_sweep_numpy
    n_sweeps = 0
    converged = False
    while n_sweeps < max_sweeps:
        max_delta = sweep(xt, r, beta, col_ss, lam1, lam2)
        n_sweeps += 1
        if max_delta < tol:
            converged = True
            break
    return beta, n_sweeps, converged
