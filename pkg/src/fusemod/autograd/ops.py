"""Differentiable ops on N x C x H x W tensors.

Forward kernels are im2col/matmul based; each op installs a closure that
computes exact gradients for the parents that need them. Spatial semantics:
out = floor((in + 2*pad - k) / stride) + 1 for conv and the pools,
out = (in - 1) * stride - 2*pad + k for the transposed conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, result

# ---------------------------------------------------------------------------
# im2col plumbing


def _im2col(x, kh, kw, stride):
    # x is already padded; returns (N, C, kh, kw, Ho, Wo) views stacked densely
    n, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def _col2im(cols, h, w, stride):
    # adjoint of _im2col: scatter-add the patches back onto an H x W canvas
    n, c, kh, kw, ho, wo = cols.shape
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


def _pad_hw(x, pad, value=0.0):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def _unpad_hw(x, pad):
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def _check_4d(x, what):
    if x.ndim != 4:
        raise ShapeMismatch(f"{what} must be N x C x H x W, got {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def _conv_geometry(x, w, stride, pad, groups):
    _check_4d(x, "conv input")
    co, cg, kh, kw = w.shape
    n, c, h, wd = x.shape
    if c != cg * groups:
        raise ShapeMismatch(f"conv input channels {c} != {cg} * groups {groups}")
    if co % groups:
        raise ShapeMismatch(f"conv output channels {co} not divisible by groups {groups}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
    return n, c, co, kh, kw, ho, wo


def _conv_forward_raw(x, w, b, stride, pad, groups):
    n, c, co, kh, kw, ho, wo = _conv_geometry(x, w, stride, pad, groups)
    cols = _im2col(_pad_hw(x, pad), kh, kw, stride)
    cg = c // groups
    cols_g = cols.reshape(n, groups, cg * kh * kw, ho * wo)
    w_g = w.reshape(groups, co // groups, cg * kh * kw)
    y = np.matmul(w_g[None], cols_g).reshape(n, co, ho, wo)
    if b is not None:
        y = y + b.reshape(1, co, 1, 1)
    return y, cols_g


def _conv_backward_raw(go, x_shape, w, cols_g, stride, pad, groups, need_dx, need_dw):
    n, c, h, wd = x_shape
    co, cg, kh, kw = w.shape
    ho, wo = go.shape[2:]
    go_g = go.reshape(n, groups, co // groups, ho * wo)
    dw = dx = None
    if need_dw:
        # dw[g,o,k] = sum_n go[n,g,o,p] cols[n,g,k,p]
        dw = np.matmul(go_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0).reshape(co, cg, kh, kw)
    if need_dx:
        w_g = w.reshape(groups, co // groups, cg * kh * kw)
        dcols = np.matmul(w_g.transpose(0, 2, 1)[None], go_g)
        dcols = dcols.reshape(n, c, kh, kw, ho, wo)
        dx = _unpad_hw(_col2im(dcols, h + 2 * pad, wd + 2 * pad, stride), pad)
    return dx, dw


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0,
           groups: int = 1) -> Tensor:
    """Grouped 2d cross-correlation with zero padding."""
    y, cols_g = _conv_forward_raw(x.data, w.data, None if b is None else b.data,
                                  stride, pad, groups)
    x_shape, w_arr = x.data.shape, w.data

    def backward(go):
        dx, dw = _conv_backward_raw(go, x_shape, w_arr, cols_g, stride, pad, groups,
                                    x.requires_grad, w.requires_grad)
        if b is None:
            return dx, dw
        db = go.sum(axis=(0, 2, 3)) if b.requires_grad else None
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return result(y, parents, backward)


def transposed_conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed conv (adjoint of conv2d); w is C_in x C_out x k x k."""
    _check_4d(x.data, "transposed conv input")
    ci, co, kh, kw = w.data.shape
    n, c, h, wd = x.data.shape
    if c != ci:
        raise ShapeMismatch(f"transposed conv input channels {c} != weight {ci}")
    hf = (h - 1) * stride + kh
    wf = (wd - 1) * stride + kw
    if hf - 2 * pad < 1 or wf - 2 * pad < 1:
        raise ShapeMismatch(f"padding {pad} consumes the whole {hf}x{wf} output")

    # cols[n,co,i,j,h,w] = sum_ci x[n,ci,h,w] w[ci,co,i,j], then scatter
    cols = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
    y = _unpad_hw(_col2im(cols, hf, wf, stride), pad)
    x_arr, w_arr = x.data, w.data

    def backward(go):
        go_p = _pad_hw(go, pad)
        dx = dw = None
        cols_go = _im2col(go_p, kh, kw, stride)  # (N, Co, kh, kw, H, W)
        if x.requires_grad:
            # dx[n,ci,h,w] = sum_{co,i,j} go_p[n,co,h*s+i,w*s+j] w[ci,co,i,j]
            dx = np.einsum("ncijhw,kcij->nkhw", cols_go, w_arr, optimize=True)
        if w.requires_grad:
            dw = np.tensordot(x_arr, cols_go, axes=([0, 2, 3], [0, 4, 5]))
        return dx, dw

    return result(y, (x, w), backward)


def bilinear_kernel(k: int) -> np.ndarray:
    """k x k bilinear interpolation stencil (partition of unity under stride k/2)."""
    factor = (k + 1) // 2
    center = factor - 1.0 if k % 2 == 1 else factor - 0.5
    ramp = 1.0 - np.abs(np.arange(k) - center) / factor
    return np.outer(ramp, ramp)


# ---------------------------------------------------------------------------
# channel ops


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Interleave channel groups: out[i * groups + g] = in[g * (C/groups) + i]."""
    _check_4d(x.data, "shuffle input")
    n, c, h, w = x.data.shape
    if c % groups:
        raise ShapeMismatch(f"channels {c} not divisible by groups {groups}")

    def perm(a, g):
        nn, cc, hh, ww = a.shape
        return a.reshape(nn, g, cc // g, hh, ww).transpose(0, 2, 1, 3, 4).reshape(a.shape)

    def backward(go):
        return (perm(go, c // groups),)  # complementary shuffle inverts

    return result(perm(x.data, groups), (x,), backward)


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    for t in tensors:
        _check_4d(t.data, "concat input")
    sizes = [t.data.shape[1] for t in tensors]
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape[0] != ref[0] or t.data.shape[2:] != ref[2:]:
            raise ShapeMismatch(f"concat shapes {ref} vs {t.data.shape}")
    data = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + sizes)

    def backward(go):
        return tuple(
            go[:, offsets[i] : offsets[i + 1]] if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return result(data, tuple(tensors), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add {a.data.shape} vs {b.data.shape}")

    def backward(go):
        return (go if a.requires_grad else None, go if b.requires_grad else None)

    return result(a.data + b.data, (a, b), backward)


def crop_hw(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window; gradients of the cut rows die."""
    _check_4d(x.data, "crop input")
    n, c, h, w = x.data.shape
    if height > h or width > w or height < 1 or width < 1:
        raise ShapeMismatch(f"cannot crop {h}x{w} to {height}x{width}")

    def backward(go):
        dx = np.zeros_like(x.data)
        dx[:, :, :height, :width] = go
        return (dx,)

    return result(x.data[:, :, :height, :width].copy(), (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(go):
        return (go * mask,)

    return result(np.where(mask, x.data, 0.0), (x,), backward)


# ---------------------------------------------------------------------------
# pooling


def _pool_geometry(x, k, stride, pad):
    _check_4d(x, "pool input")
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"pool window {k} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    return n, c, h, w, ho, wo


def maxpool(x: Tensor, k: int = 3, stride: int = 2, pad: int = 1) -> Tensor:
    n, c, h, w, ho, wo = _pool_geometry(x.data, k, stride, pad)
    cols = _im2col(_pad_hw(x.data, pad, value=-np.inf), k, k, stride)
    flat = cols.reshape(n, c, k * k, ho, wo)
    arg = flat.argmax(axis=2)
    y = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def backward(go):
        dcols = np.zeros((n, c, k * k, ho, wo))
        np.put_along_axis(dcols, arg[:, :, None], go[:, :, None], axis=2)
        dx = _col2im(dcols.reshape(n, c, k, k, ho, wo), h + 2 * pad, w + 2 * pad, stride)
        return (_unpad_hw(dx, pad),)

    return result(y, (x,), backward)


def avgpool(x: Tensor, k: int = 3, stride: int = 2, pad: int = 1) -> Tensor:
    """Average pooling; zero padding counts toward the k*k denominator."""
    n, c, h, w, ho, wo = _pool_geometry(x.data, k, stride, pad)
    cols = _im2col(_pad_hw(x.data, pad), k, k, stride)
    y = cols.mean(axis=(2, 3))

    def backward(go):
        dcols = np.broadcast_to(go[:, :, None, None] / (k * k), (n, c, k, k, ho, wo))
        dx = _col2im(np.ascontiguousarray(dcols), h + 2 * pad, w + 2 * pad, stride)
        return (_unpad_hw(dx, pad),)

    return result(y, (x,), backward)


# ---------------------------------------------------------------------------
# batch norm


@dataclass
class BNState:
    """Running statistics buffer (not differentiated)."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "BNState":
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState, training: bool,
               momentum: float = 0.1, eps: float = 1e-5, update_running: bool = True) -> Tensor:
    """Per-channel batch norm over (N, H, W).

    Train mode normalizes with biased batch statistics and, unless
    update_running is off, folds them into the running buffers. Eval mode
    normalizes with the running buffers, so if they equal the batch stats the
    two modes agree exactly.
    """
    _check_4d(x.data, "batch norm input")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch(f"affine params for {c} channels, got {gamma.data.shape}")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_running:
            state.mean = (1.0 - momentum) * state.mean + momentum * mean
            state.var = (1.0 - momentum) * state.var + momentum * var
    else:
        mean, var = state.mean, state.var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    m = n * h * w

    def backward(go):
        dgamma = (go * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = go.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            gxhat = go * gamma.data[None, :, None, None]
            if training:
                s1 = gxhat.sum(axis=(0, 2, 3))
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3))
                dx = (inv_std[None, :, None, None] / m) * (
                    m * gxhat - s1[None, :, None, None] - xhat * s2[None, :, None, None]
                )
            else:
                dx = gxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return result(y, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# loss


def weighted_cross_entropy(logits: Tensor, target, weights) -> Tensor:
    """Mean over all pixels of w[t] * (-log softmax(logits)[t])."""
    x = logits.data
    _check_4d(x, "logits")
    n, c, h, w = x.shape
    t = np.asarray(target)
    if t.shape != (n, h, w):
        raise ShapeMismatch(f"target {t.shape} vs logits {x.shape}")
    if t.min() < 0 or t.max() >= c:
        raise ShapeMismatch(f"target labels outside [0, {c})")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,):
        raise ShapeMismatch(f"want {c} class weights, got {weights.shape}")

    shift = x - x.max(axis=1, keepdims=True)
    exp = np.exp(shift)
    denom = exp.sum(axis=1, keepdims=True)
    log_p = shift - np.log(denom)
    t_idx = t[:, None]
    picked = np.take_along_axis(log_p, t_idx, axis=1)[:, 0]
    wt = weights[t]
    m = n * h * w
    loss = -(wt * picked).sum() / m

    def backward(go):
        p = exp / denom
        grad = p.copy()
        np.put_along_axis(grad, t_idx, np.take_along_axis(grad, t_idx, axis=1) - 1.0, axis=1)
        grad *= (wt / m)[:, None]
        return (grad * go,)

    return result(np.asarray(loss), (logits,), backward)
