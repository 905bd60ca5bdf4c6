"""Dense 4-D tensor primitives: convolution, resampling, nonlinearities,
and channel-wise dropout.

Layout is (batch, channels, height, width) throughout. Convolution is
cross-correlation (no kernel flip) computed by im2col + GEMM; the backward
functions return gradients with the same shapes as their inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError
from ..rng import as_generator


def require_tensor4(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if x.ndim != 4:
        raise ConfigError(f"{name} must be 4-D (batch, channels, height, width), got shape {x.shape}")
    return x


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int):
    """Unfold x into (B*Ho*Wo, C*k*k) patch rows plus output geometry."""
    b, c, h, w = x.shape
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kernel) // stride + 1
    w_out = (w + 2 * padding - kernel) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ConfigError(
            f"kernel {kernel} with stride {stride}, padding {padding} does not fit input {h}x{w}"
        )
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, Ho, Wo, k, k) -> (B, Ho, Wo, C, k, k) -> rows
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_out * w_out, c * kernel * kernel)
    return np.ascontiguousarray(cols), h_out, w_out, x.shape


def _col2im(dcols: np.ndarray, padded_shape, kernel: int, stride: int, h_out: int, w_out: int,
            padding: int) -> np.ndarray:
    """Scatter-add patch-row gradients back onto the (padded) input grid."""
    b, c = padded_shape[0], padded_shape[1]
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    dwin = dcols.reshape(b, h_out, w_out, c, kernel, kernel).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i : i + h_out * stride : stride, j : j + w_out * stride : stride] += dwin[..., i, j]
    if padding > 0:
        return dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: int = 0, cache: dict | None = None) -> np.ndarray:
    """Cross-correlate x with weights (C_out, C_in, k, k) and add bias.

    Output height is floor((H + 2*padding - k) / stride) + 1, same for width.
    Pass a dict as `cache` to retain the unfolded input for the backward pass.
    """
    require_tensor4(x, "conv input")
    if weights.ndim != 4:
        raise ConfigError(f"conv weights must be 4-D, got shape {weights.shape}")
    c_out, c_in, kh, kw = weights.shape
    if kh != kw:
        raise ConfigError(f"only square kernels supported, got {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ConfigError(f"input has {x.shape[1]} channels but weights expect {c_in}")
    if bias.shape != (c_out,):
        raise ConfigError(f"bias must have shape ({c_out},), got {bias.shape}")

    b = x.shape[0]
    cols, h_out, w_out, padded_shape = _im2col(x, kh, stride, padding)
    w_mat = weights.reshape(c_out, -1)
    y = cols @ w_mat.T + bias
    y = y.reshape(b, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    if cache is not None:
        cache.update(cols=cols, padded_shape=padded_shape, h_out=h_out, w_out=w_out,
                     kernel=kh, stride=stride, padding=padding, weights_shape=weights.shape)
    return np.ascontiguousarray(y)


def conv2d_backward(dy: np.ndarray, weights: np.ndarray, cache: dict):
    """Gradients of a cached conv2d_forward: returns (dx, dweights, dbias)."""
    b, c_out, h_out, w_out = dy.shape
    dy_col = np.ascontiguousarray(dy.transpose(0, 2, 3, 1).reshape(-1, c_out))
    dw = (dy_col.T @ cache["cols"]).reshape(cache["weights_shape"])
    db = dy_col.sum(axis=0)
    dcols = dy_col @ weights.reshape(c_out, -1)
    dx = _col2im(dcols, cache["padded_shape"], cache["kernel"], cache["stride"],
                 h_out, w_out, cache["padding"])
    return dx, dw, db


def upsample_nearest(x: np.ndarray, factor: int = 2) -> np.ndarray:
    """Nearest-neighbor upsampling along both spatial axes."""
    return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)


def upsample_nearest_backward(dy: np.ndarray, factor: int = 2) -> np.ndarray:
    """Sum the gradient over each factor x factor output block."""
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float) -> np.ndarray:
    return dy * np.where(x > 0, 1.0, slope).astype(dy.dtype)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)


def channel_dropout_mask(n: int, channels: int, p_drop: float, rng) -> np.ndarray:
    """Draw an (n, channels) keep/zero mask with survivors pre-scaled by 1/(1-p).

    One uniform draw per (row, channel); a draw below p_drop zeroes the slice.
    """
    if not 0.0 <= p_drop < 1.0:
        raise ConfigError(f"p_drop must be in [0, 1), got {p_drop}")
    gen = as_generator(rng)
    keep = gen.random((n, channels)) >= p_drop
    return keep.astype(np.float64) / (1.0 - p_drop)


def channel_dropout(activations: np.ndarray, p_drop: float, rng) -> np.ndarray:
    """Zero whole (batch, channel) slices with probability p_drop each.

    Surviving slices are scaled by 1/(1 - p_drop) so the expected value of
    the output equals the input. p_drop = 0 is an exact no-op that consumes
    no randomness.
    """
    require_tensor4(activations, "activations")
    if not 0.0 <= p_drop < 1.0:
        raise ConfigError(f"p_drop must be in [0, 1), got {p_drop}")
    if p_drop == 0.0:
        return activations
    mask = channel_dropout_mask(activations.shape[0], activations.shape[1], p_drop, rng)
    return activations * mask[:, :, None, None].astype(activations.dtype)
