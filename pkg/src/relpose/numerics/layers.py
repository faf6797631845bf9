"""Layer kernels with explicit backward rules.

Layouts are channels-last: ``conv1d`` takes ``(batch, time, channels)``,
``dense`` takes ``(batch, features)`` or a single ``(features,)`` vector, and
``batch_norm`` normalizes the last axis over all others.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .tensor import Tensor, as_tensor, make_result

LEAKY_SLOPE = 0.01
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass
class LayerParams:
    """Learnable tensors of one layer plus normalization running statistics."""

    kind: str
    weight: Tensor
    bias: Tensor
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        if self.kind != "batchnorm":
            return {}
        return {"running_mean": self.running_mean, "running_var": self.running_var}


def init_conv(c_in: int, c_out: int, width: int, rng: np.random.Generator, dtype=np.float64) -> LayerParams:
    bound = 1.0 / np.sqrt(c_in * width)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, width)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(c_out,)).astype(dtype)
    return LayerParams("conv", Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def init_dense(d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64) -> LayerParams:
    bound = 1.0 / np.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(d_out,)).astype(dtype)
    return LayerParams("dense", Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def init_batchnorm(channels: int, dtype=np.float64) -> LayerParams:
    return LayerParams(
        "batchnorm",
        Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
        Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
    )


def conv1d(x: Tensor, params: LayerParams, kernel_width: int | None = None, dilation: int = 1) -> Tensor:
    """Valid (unpadded) dilated 1D convolution over the time axis of ``(B, T, C_in)``.

    Weights are ``(C_out, C_in, width)``; taps are gathered into one matrix so
    each call is a single GEMM.
    """
    x = as_tensor(x)
    w, b = params.weight, params.bias
    c_out, c_in, width = w.shape
    if kernel_width is not None and kernel_width != width:
        raise ConfigurationError(f"kernel width {kernel_width} does not match weights ({width})")
    if x.ndim != 3 or x.shape[2] != c_in:
        raise ConfigurationError(f"conv1d expects (B, T, {c_in}) input, got {x.shape}")
    batch, t_in = x.shape[0], x.shape[1]
    t_out = t_in - (width - 1) * dilation
    if t_out < 1:
        raise ConfigurationError(
            f"sequence of length {t_in} is shorter than the receptive field {(width - 1) * dilation + 1}"
        )
    xd = x.data
    if width == 1:
        cols = xd.reshape(-1, c_in)
    else:
        cols = np.concatenate([xd[:, k * dilation : k * dilation + t_out] for k in range(width)], axis=2)
        cols = cols.reshape(-1, width * c_in)
    wmat = w.data.transpose(2, 1, 0).reshape(width * c_in, c_out)
    out = (cols @ wmat + b.data).reshape(batch, t_out, c_out)

    def bw(g):
        g2 = g.reshape(-1, c_out)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(batch, t_out, width, c_in)
            if width == 1:
                gx = gcols[:, :, 0, :]
            else:
                gx = np.zeros_like(xd)
                for k in range(width):
                    gx[:, k * dilation : k * dilation + t_out] += gcols[:, :, k, :]
        gw = (cols.T @ g2).reshape(width, c_in, c_out).transpose(2, 1, 0) if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return make_result(out, (x, w, b), bw)


def dense(x: Tensor, params: LayerParams) -> Tensor:
    """Affine map ``W x + b`` applied to each row."""
    x = as_tensor(x)
    w, b = params.weight, params.bias
    d_out, d_in = w.shape
    if x.shape[-1] != d_in:
        raise ConfigurationError(f"dense layer expects {d_in} inputs, got {x.shape[-1]}")
    xd = x.data
    out = xd @ w.data.T + b.data

    def bw(g):
        gx = g @ w.data if x.requires_grad else None
        if xd.ndim == 1:
            gw = np.outer(g, xd) if w.requires_grad else None
            gb = g if b.requires_grad else None
        else:
            gw = g.T @ xd if w.requires_grad else None
            gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return make_result(out, (x, w, b), bw)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky slope must lie in (0, 1), got {slope}")
    xd = x.data
    neg = xd < 0
    return make_result(np.where(neg, xd * slope, xd), (x,), lambda g: (np.where(neg, g * slope, g),))


def batch_norm(
    x: Tensor,
    params: LayerParams,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization over the last axis; statistics span all other axes.

    In training mode the batch statistics are used and the running statistics
    are updated in place (unbiased variance, like the usual frameworks).
    """
    x = as_tensor(x)
    gamma, beta = params.weight, params.bias
    axes = tuple(range(x.ndim - 1))
    bshape = [1] * x.ndim
    bshape[-1] = x.shape[-1]
    xd = x.data
    if training:
        if x.shape[0] < 2:
            raise ConfigurationError("batch normalization in training mode needs a batch of at least 2")
        n = xd.size // x.shape[-1]
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        params.running_mean *= 1.0 - momentum
        params.running_mean += momentum * mean
        params.running_var *= 1.0 - momentum
        params.running_var += momentum * var * (n / max(n - 1, 1))
    else:
        n = None
        mean = params.running_mean
        var = params.running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (inv_std.reshape(bshape) / n) * (n * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), bw)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are rescaled by ``1 / (1 - rate)``."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape, dtype=x.dtype) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))


def mpjpe_loss(pred: Tensor, target) -> Tensor:
    """Mean per-joint Euclidean distance between ``(..., J, 3)`` poses.

    The subgradient at an exactly zero distance is taken to be zero.
    """
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target
    dist = np.sqrt((diff * diff).sum(axis=-1))
    count = dist.size

    def bw(g):
        safe = np.where(dist > 0, dist, 1.0)
        unit = np.where((dist > 0)[..., None], diff / safe[..., None], 0.0)
        return ((g / count) * unit,)

    return make_result(np.asarray(dist.mean(), dtype=pred.dtype), (pred,), bw)
