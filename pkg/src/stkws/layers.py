"""Layer vocabulary of the separable temporal convolution network.

Activations are laid out time-major: ``(T, C)`` for one utterance or
``(B, T, C)`` for a batch.  Convolutions run along the time axis with the
feature dimension acting as channels.  No convolution or dense layer carries
a bias.
"""

from __future__ import annotations

import numpy as np

from .autograd import Module, Parameter, Tensor, matmul, relu, tensor
from .exceptions import RangeError, ShapeError, ValidationError

KERNEL_SIZE = 3


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _time_axis_slice(x: np.ndarray, start: int, length: int):
    return x[..., start:start + length, :]


def depthwise_conv1d(x, kernel, dilation: int = 1) -> Tensor:
    """Per-channel 3-tap dilated convolution with ``dilation`` zeros of padding per side.

    ``y[t, c] = sum_j kernel[j, c] * x[t + (j - 1) * dilation, c]``.
    """
    x, kernel = tensor(x), tensor(kernel)
    if dilation < 1 or int(dilation) != dilation:
        raise RangeError(f"dilation must be a positive integer, got {dilation}")
    if x.ndim < 2:
        raise ShapeError(f"depthwise conv needs (..., T, C) input, got {x.shape}")
    k, channels = kernel.shape
    if x.shape[-1] != channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel has {channels}")
    d = int(dilation)
    T = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(d, d), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros_like(x.data)
    for j in range(k):
        out += kernel.data[j] * _time_axis_slice(xp, j * d, T)

    def backward(g):
        gx = gk = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j * d:j * d + T, :] += g * kernel.data[j]
            gx = gxp[..., d:d + T, :]
        if kernel.requires_grad:
            flat_g = g.reshape(-1, channels)
            gk = np.stack([(flat_g * _time_axis_slice(xp, j * d, T).reshape(-1, channels)).sum(axis=0)
                           for j in range(k)])
        return gx, gk

    return Tensor.from_op(out, (x, kernel), backward)


def batch_norm_train(x, gamma, beta, eps: float):
    """Normalise with batch statistics over every axis but the last.

    Returns ``(y, batch_mean, batch_var)``; the variance is the biased estimate.
    """
    x, gamma, beta = tensor(x), tensor(gamma), tensor(beta)
    channels = x.shape[-1]
    flat = x.data.reshape(-1, channels)
    n = flat.shape[0]
    mu = flat.mean(axis=0)
    var = flat.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        gf = g.reshape(-1, channels)
        xh = xhat.reshape(-1, channels)
        ggamma = (gf * xh).sum(axis=0)
        gbeta = gf.sum(axis=0)
        gx = None
        if x.requires_grad:
            dxhat = gf * gamma.data
            gx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xh * (dxhat * xh).sum(axis=0))
            gx = gx.reshape(x.shape)
        return gx, ggamma, gbeta

    return Tensor.from_op(out, (x, gamma, beta), backward), mu, var


def batch_norm_infer(x, gamma, beta, running_mean, running_var, eps: float) -> Tensor:
    x, gamma, beta = tensor(x), tensor(gamma), tensor(beta)
    inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
    xhat = (x.data - running_mean) * inv_std
    out = gamma.data * xhat + beta.data
    channels = x.shape[-1]

    def backward(g):
        gf = g.reshape(-1, channels)
        return (g * gamma.data * inv_std,
                (gf * xhat.reshape(-1, channels)).sum(axis=0),
                gf.sum(axis=0))

    return Tensor.from_op(out, (x, gamma, beta), backward)


class DepthwiseConv(Module):
    """Bias-free dilated depthwise convolution with a ``(3, C)`` kernel."""

    def __init__(self, channels: int, dilation: int = 1, rng=None, dtype=np.float64):
        super().__init__()
        if dilation < 1:
            raise RangeError(f"dilation must be >= 1, got {dilation}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dilation = int(dilation)
        self.weight = Parameter(he_uniform(rng, (KERNEL_SIZE, channels), KERNEL_SIZE, dtype))

    @property
    def channels(self) -> int:
        return self.weight.shape[1]

    def forward(self, x):
        return depthwise_conv1d(x, self.weight, self.dilation)


class PointwiseConv(Module):
    """Bias-free 1x1 convolution, i.e. the same linear map applied at every time step."""

    def __init__(self, in_channels: int, out_channels: int, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(he_uniform(rng, (in_channels, out_channels), in_channels, dtype))

    def forward(self, x):
        x = tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"input has {x.shape[-1]} channels, weight expects {self.weight.shape[0]}")
        return matmul(x, self.weight)


class BatchNorm(Module):
    """Per-channel batch normalisation with trainable scale and shift."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers["running_mean"]

    @running_mean.setter
    def running_mean(self, value) -> None:
        self._buffers["running_mean"] = np.asarray(value, dtype=self.gamma.dtype)

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers["running_var"]

    @running_var.setter
    def running_var(self, value) -> None:
        self._buffers["running_var"] = np.asarray(value, dtype=self.gamma.dtype)

    def forward(self, x, mode: str | None = None):
        x = tensor(x)
        if x.shape[-1] != self.gamma.shape[0]:
            raise ShapeError(f"input has {x.shape[-1]} channels, batch norm has {self.gamma.shape[0]}")
        mode = mode or self.mode
        if mode == "infer":
            return batch_norm_infer(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)
        if x.size // x.shape[-1] < 2:
            raise ValidationError("batch norm in train mode needs more than one value per channel")
        out, mu, var = batch_norm_train(x, self.gamma, self.beta, self.eps)
        m = self.momentum
        self.running_mean = m * self.running_mean + (1 - m) * mu
        self.running_var = m * self.running_var + (1 - m) * var
        return out


def depthwise_conv(x, layer: DepthwiseConv) -> Tensor:
    return layer(x)


def pointwise_conv(x, layer: PointwiseConv) -> Tensor:
    return layer(x)


def batch_norm(x, layer: BatchNorm, mode: str | None = None) -> Tensor:
    return layer(x, mode=mode)


def avg_pool_time(x) -> Tensor:
    """Mean over the time axis: ``(..., T, C) -> (..., C)``.

    Each channel is summed in sorted order, so the result does not depend on
    the order of the frames, not even in the last bit.
    """
    x = tensor(x)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"average pooling needs at least one time step, got shape {x.shape}")
    T = x.shape[-2]
    out = np.sort(x.data, axis=-2).sum(axis=-2) / x.dtype.type(T)
    return Tensor.from_op(out.astype(x.dtype, copy=False), (x,),
                          lambda g: (np.broadcast_to(np.expand_dims(g, -2) / x.dtype.type(T), x.shape).copy(),))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Batch-mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B, K), got {logits.shape}")
    B, K = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"expected {B} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= K:
        raise ValidationError(f"labels must be integers in [0, {K})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(B)
    loss = np.mean(log_z - shifted[rows, labels])

    def backward(g):
        probs = np.exp(shifted - log_z[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (g / B),)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


class SeparableUnit(Module):
    """Depthwise conv -> BN -> ReLU -> pointwise conv -> BN (-> ReLU unless ``final_relu`` is off)."""

    def __init__(self, in_channels: int, out_channels: int, dilation: int = 1,
                 final_relu: bool = True, rng=None, dtype=np.float64):
        super().__init__()
        self.final_relu = final_relu
        self.dw = DepthwiseConv(in_channels, dilation, rng, dtype)
        self.dw_bn = BatchNorm(in_channels, dtype=dtype)
        self.pw = PointwiseConv(in_channels, out_channels, rng, dtype)
        self.pw_bn = BatchNorm(out_channels, dtype=dtype)

    def forward(self, x):
        h = relu(self.dw_bn(self.dw(x)))
        h = self.pw_bn(self.pw(h))
        return relu(h) if self.final_relu else h


class ResidualBlock(Module):
    """Two separable units with an identity shortcut: ``relu(x + unit1(unit0(x)))``."""

    def __init__(self, channels: int, dilations=(1, 1), rng=None, dtype=np.float64):
        super().__init__()
        self.unit0 = SeparableUnit(channels, channels, dilations[0], True, rng, dtype)
        self.unit1 = SeparableUnit(channels, channels, dilations[1], False, rng, dtype)

    @property
    def channels(self) -> int:
        return self.unit0.dw.channels

    @property
    def dilations(self) -> tuple[int, int]:
        return self.unit0.dw.dilation, self.unit1.dw.dilation

    def forward(self, x):
        x = tensor(x)
        if x.shape[-1] != self.channels:
            raise ShapeError(f"block expects {self.channels} channels, got {x.shape[-1]}")
        return relu(x + self.unit1(self.unit0(x)))


def residual_block_forward(x, block: ResidualBlock, mode: str | None = None) -> Tensor:
    if mode is not None:
        block.set_mode(mode)
    return block(x)


class Dense(Module):
    """Bias-free fully connected layer."""

    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(he_uniform(rng, (in_features, out_features), in_features, dtype))

    def forward(self, x):
        x = tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"input has {x.shape[-1]} features, layer expects {self.weight.shape[0]}")
        return matmul(x, self.weight)
