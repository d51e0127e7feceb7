"""Numpy primitives for the desk-scale trainer: im2col convolution, pooling,
batch normalization, ReLU, and softmax cross-entropy, each with its backward
pass. Everything runs in float64; batches are (B, C, H, W).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_dim(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, OH*OW) patch matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, oh, ow, _, _ = windows.shape
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kernel * kernel, oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols: np.ndarray, x_shape, kernel: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch columns back onto the image."""
    b, c, h, w = x_shape
    oh = conv_out_dim(h, kernel, stride, pad)
    ow = conv_out_dim(w, kernel, stride, pad)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cr = cols.reshape(b, c, kernel, kernel, oh, ow)
    for ki in range(kernel):
        for kj in range(kernel):
            xp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += cr[:, :, ki, kj]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv_forward(x: np.ndarray, weight: np.ndarray, stride: int, pad: int):
    """weight is (C_out, C_in, k, k). Returns (out, cols) with cols cached
    for the backward pass."""
    c_out, c_in, k, _ = weight.shape
    b = x.shape[0]
    oh = conv_out_dim(x.shape[2], k, stride, pad)
    ow = conv_out_dim(x.shape[3], k, stride, pad)
    cols = im2col(x, k, stride, pad)
    out = np.matmul(weight.reshape(c_out, -1)[None], cols).reshape(b, c_out, oh, ow)
    return out, cols


def conv_backward(dout: np.ndarray, weight: np.ndarray, cols: np.ndarray, x_shape, stride: int, pad: int):
    """Returns (dweight, dx). dweight is unmasked; the caller zeroes pruned
    filter positions."""
    c_out, c_in, k, _ = weight.shape
    b = dout.shape[0]
    dflat = dout.reshape(b, c_out, -1)
    dweight = np.einsum("bol,bil->oi", dflat, cols).reshape(weight.shape)
    dcols = np.matmul(weight.reshape(c_out, -1).T[None], dflat)
    dx = col2im(dcols, x_shape, k, stride, pad)
    return dweight, dx


def maxpool_forward(x: np.ndarray, window: int, stride: int):
    """Returns (out, cache). Ties resolve to the first maximum in row-major
    window order, matching a naive scan."""
    b, c, h, w = x.shape
    cols = im2col(x.reshape(b * c, 1, h, w), window, stride, 0)  # (B*C, w*w, L)
    arg = cols.argmax(axis=1)
    out_flat = np.take_along_axis(cols, arg[:, None, :], axis=1)[:, 0, :]
    oh = conv_out_dim(h, window, stride, 0)
    ow = conv_out_dim(w, window, stride, 0)
    out = out_flat.reshape(b, c, oh, ow)
    return out, (arg, x.shape, cols.shape, window, stride)


def maxpool_backward(dout: np.ndarray, cache) -> np.ndarray:
    arg, x_shape, cols_shape, window, stride = cache
    b, c, h, w = x_shape
    dcols = np.zeros(cols_shape, dtype=dout.dtype)
    dflat = dout.reshape(b * c, 1, -1)
    np.put_along_axis(dcols, arg[:, None, :], dflat, axis=1)
    dx = col2im(dcols, (b * c, 1, h, w), window, stride, 0)
    return dx.reshape(b, c, h, w)


def avgpool_forward(x: np.ndarray, window: int, stride: int):
    b, c, h, w = x.shape
    cols = im2col(x.reshape(b * c, 1, h, w), window, stride, 0)
    out_flat = cols.mean(axis=1)
    oh = conv_out_dim(h, window, stride, 0)
    ow = conv_out_dim(w, window, stride, 0)
    return out_flat.reshape(b, c, oh, ow), (x.shape, cols.shape, window, stride)


def avgpool_backward(dout: np.ndarray, cache) -> np.ndarray:
    x_shape, cols_shape, window, stride = cache
    b, c, h, w = x_shape
    dcols = np.broadcast_to(
        dout.reshape(b * c, 1, -1) / (window * window), cols_shape
    ).astype(dout.dtype)
    dx = col2im(np.ascontiguousarray(dcols), (b * c, 1, h, w), window, stride, 0)
    return dx.reshape(b, c, h, w)


BN_EPS = 1e-5


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, training: bool,
                      running_mean: np.ndarray, running_var: np.ndarray, momentum: float = 0.9):
    """Per-channel batch normalization over (B, H, W). In training mode the
    running moments are updated in place."""
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    cache = (xhat, inv_std, gamma, axes, shape) if training else None
    return out, cache


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gamma, axes, shape = cache
    m = dout.size // gamma.size
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    dx = (
        dxhat - dxhat.mean(axis=axes).reshape(shape) - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape) / m
    ) * inv_std.reshape(shape)
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = logits.shape[0]
    loss = -log_probs[np.arange(b), labels].mean()
    probs = np.exp(log_probs)
    dlogits = probs
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b
