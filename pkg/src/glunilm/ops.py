"""Differentiable primitives with paired forward/backward functions.

Every function is pure and works on float64 numpy arrays. Sequence tensors are
laid out ``[..., channels, length]`` so a leading batch axis is optional; dense
tensors are ``[..., features]``.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import ShapeError


@dataclass(frozen=True)
class ConvParams:
    """Kernels ``[c_out, c_in, k]`` and bias ``[c_out]``."""

    kernels: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernels.ndim != 3 or min(self.kernels.shape) < 1:
            raise ShapeError(f"conv kernels must be [c_out, c_in, k], got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match kernels {self.kernels.shape}"
            )

    @property
    def kernel_size(self):
        return self.kernels.shape[2]


@dataclass(frozen=True)
class DenseParams:
    """Weights ``[n_out, n_in]`` and bias ``[n_out]``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ShapeError(f"dense weights must be [n_out, n_in], got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"dense bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )


def as_tensor(x):
    """Return ``x`` as a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def same_padding(k):
    """Left/right zero padding that keeps a length-preserving convolution.

    For even ``k`` the extra sample goes on the right (k=4 -> 1, 2).
    """
    left = (k - 1) // 2
    return left, k - 1 - left


def _check_conv_input(x, params):
    if x.ndim < 2:
        raise ShapeError(f"conv input must be [..., c_in, L], got {x.shape}")
    c_in = params.kernels.shape[1]
    if x.shape[-2] != c_in:
        raise ShapeError(
            f"conv input shape {x.shape} has {x.shape[-2]} channels but kernels "
            f"{params.kernels.shape} expect c_in={c_in}"
        )
    if x.shape[-1] < 1:
        raise ShapeError("conv input length must be >= 1")


def _im2col(x, k):
    # [N, c_in, L] -> [N, c_in * k, L]; row i * k + j holds padded[i, t + j]
    n, c_in, L = x.shape
    left, right = same_padding(k)
    padded = np.pad(x, [(0, 0), (0, 0), (left, right)])
    cols = np.stack([padded[:, :, j:j + L] for j in range(k)], axis=2)
    return cols.reshape(n, c_in * k, L)


def conv1d_same(x, params):
    """Zero-padded 1-D cross-correlation; output length equals input length.

    ``out[o, t] = bias[o] + sum_{i, j} padded[i, t + j] * kernels[o, i, j]``
    """
    x = as_tensor(x)
    _check_conv_input(x, params)
    c_out, c_in, k = params.kernels.shape
    batch_shape, L = x.shape[:-2], x.shape[-1]
    cols = _im2col(x.reshape(-1, c_in, L), k)
    out = params.kernels.reshape(c_out, -1) @ cols + params.bias[:, None]
    return out.reshape(batch_shape + (c_out, L))


def conv1d_same_backward(x, params, grad_out):
    """Gradients of :func:`conv1d_same`.

    Returns ``(grad_input, ConvParams(grad_kernels, grad_bias))``; parameter
    gradients are summed over any leading batch axes.
    """
    x = as_tensor(x)
    _check_conv_input(x, params)
    c_out, c_in, k = params.kernels.shape
    batch_shape, L = x.shape[:-2], x.shape[-1]
    if grad_out.shape != batch_shape + (c_out, L):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match conv output "
            f"{batch_shape + (c_out, L)}"
        )
    cols = _im2col(x.reshape(-1, c_in, L), k)
    g = grad_out.reshape(-1, c_out, L)
    grad_w = np.zeros((c_out, c_in * k))
    for n in range(len(g)):
        grad_w += g[n] @ cols[n].T
    grad_bias = g.sum(axis=(0, 2))

    grad_cols = (params.kernels.reshape(c_out, -1).T @ g).reshape(-1, c_in, k, L)
    left, _ = same_padding(k)
    grad_padded = np.zeros((len(g), c_in, L + k - 1))
    for j in range(k):
        grad_padded[:, :, j:j + L] += grad_cols[:, :, j]
    grad_x = grad_padded[:, :, left:left + L].reshape(x.shape)
    return grad_x, ConvParams(grad_w.reshape(c_out, c_in, k), grad_bias)


def maxpool2(x):
    """Non-overlapping max pooling with window 2 along the last axis.

    Returns ``(pooled, argmax)`` where ``argmax`` holds input positions along
    the last axis. Ties resolve to the earlier position.
    """
    x = as_tensor(x)
    if x.shape[-1] % 2:
        raise ShapeError(f"maxpool2 needs an even length, got {x.shape[-1]}")
    even, odd = x[..., 0::2], x[..., 1::2]
    take_even = even >= odd
    out = np.where(take_even, even, odd)
    argmax = 2 * np.arange(out.shape[-1]) + (~take_even)
    return out, argmax


def maxpool2_backward(argmax, grad_out):
    if argmax.shape != grad_out.shape:
        raise ShapeError(f"argmax shape {argmax.shape} != grad_out shape {grad_out.shape}")
    grad_in = np.zeros(grad_out.shape[:-1] + (2 * grad_out.shape[-1],))
    np.put_along_axis(grad_in, argmax, grad_out, axis=-1)
    return grad_in


def _check_dense_input(x, params):
    n_in = params.weights.shape[1]
    if x.ndim < 1 or x.shape[-1] != n_in:
        raise ShapeError(
            f"dense input shape {x.shape} does not match weights {params.weights.shape}"
        )


def dense(x, params):
    """Affine map ``weights @ x + bias`` over the last axis."""
    x = as_tensor(x)
    _check_dense_input(x, params)
    return x @ params.weights.T + params.bias


def dense_backward(x, params, grad_out):
    x = as_tensor(x)
    _check_dense_input(x, params)
    n_out, n_in = params.weights.shape
    if grad_out.shape != x.shape[:-1] + (n_out,):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match dense output")
    g2 = grad_out.reshape(-1, n_out)
    grad_weights = g2.T @ x.reshape(-1, n_in)
    grad_bias = g2.sum(axis=0)
    return grad_out @ params.weights, DenseParams(grad_weights, grad_bias)


def sigmoid(x):
    return expit(as_tensor(x))


def sigmoid_backward(out, grad_out):
    """Backward of sigmoid, expressed through its forward output."""
    return grad_out * out * (1.0 - out)


def relu(x):
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, grad_out):
    # subgradient at exactly 0 is 0
    return np.where(x > 0.0, grad_out, 0.0)


def elementwise_mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul shapes differ: {a.shape} vs {b.shape}")
    return a * b


def elementwise_mul_backward(a, b, grad_out):
    return grad_out * b, grad_out * a
