"""Network building blocks, initialization, Adam, and parameter accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def _activate(name, x):
    if name == "linear":
        return x
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}")
    return T.elementwise(name, x)


class DenseLayer:
    """Affine map plus activation; weights are out x in, bias is out."""

    def __init__(self, in_dim, out_dim, activation="linear"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weights = Tensor(np.zeros((out_dim, in_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise T.ShapeError(
                f"dense layer expects input dim {self.in_dim}, got shape {x.shape}"
            )
        return _activate(self.activation, x @ self.weights.T + self.bias)

    def parameters(self):
        return [self.weights, self.bias]

    def init(self, rng, scale=1.0):
        bound = scale / math.sqrt(self.in_dim)
        self.weights.data[...] = rng.uniform(-bound, bound, self.weights.shape)
        self.bias.data[...] = 0.0


class ConvLayer:
    """Valid strided conv with per-filter bias."""

    def __init__(self, in_ch, out_ch, kernel, stride, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.stride = stride
        self.activation = activation
        self.kernels = Tensor(
            np.zeros((out_ch, in_ch, kernel, kernel)), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x):
        y = T.conv2d(x, self.kernels, self.stride)
        bias = self.bias.reshape(-1, 1, 1)
        return _activate(self.activation, y + bias)

    def parameters(self):
        return [self.kernels, self.bias]

    def init(self, rng, scale=1.0):
        f, c, kh, kw = self.kernels.shape
        bound = scale / math.sqrt(c * kh * kw)
        self.kernels.data[...] = rng.uniform(-bound, bound, self.kernels.shape)
        self.bias.data[...] = 0.0


class DeconvLayer:
    """Adjoint of ConvLayer; kernels stay F x C x k x k with F = input channels."""

    def __init__(self, in_ch, out_ch, kernel, stride, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.stride = stride
        self.activation = activation
        self.kernels = Tensor(
            np.zeros((in_ch, out_ch, kernel, kernel)), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x):
        y = T.deconv2d(x, self.kernels, self.stride)
        bias = self.bias.reshape(-1, 1, 1)
        return _activate(self.activation, y + bias)

    def parameters(self):
        return [self.kernels, self.bias]

    def init(self, rng, scale=1.0):
        f, c, kh, kw = self.kernels.shape
        bound = scale / math.sqrt(f * kh * kw)
        self.kernels.data[...] = rng.uniform(-bound, bound, self.kernels.shape)
        self.bias.data[...] = 0.0


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def init(self, rng, scale=1.0):
        for layer in self.layers:
            layer.init(rng, scale)


def forward_mlp(layers, x):
    """Compose a list of DenseLayers; x is batch x in."""
    for layer in layers:
        x = layer(x)
    return x


@dataclass
class GaussianParams:
    """Per-dimension mean and log standard deviation of a diagonal Gaussian."""

    mean: Tensor
    log_std: Tensor

    @property
    def std(self):
        return T.exp(self.log_std)


def gaussian_log_prob(params, x):
    """Diagonal-Gaussian log density, summed over the last axis.

    Accepts [d] or [batch, d]; returns a scalar or a [batch] tensor.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    z = (x - params.mean) * T.exp(-1.0 * params.log_std)
    per_dim = -0.5 * (z**2) - params.log_std - 0.5 * T.LOG_2PI
    return per_dim.sum(axis=-1) if per_dim.ndim > 0 else per_dim


def gaussian_entropy(params):
    """Entropy of a diagonal Gaussian, summed over the last axis."""
    per_dim = params.log_std + 0.5 * (1.0 + T.LOG_2PI)
    return per_dim.sum(axis=-1)


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0


class Adam:
    """Adam with the standard bias correction."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState(
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        adam_step(
            self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class ParamCounts:
    total: int
    trainable: int

    def __add__(self, other):
        return ParamCounts(self.total + other.total, self.trainable + other.trainable)


def param_count(model):
    """Total and trainable parameter counts for any parameters() bundle."""
    counts = ParamCounts(0, 0)
    params = model.parameters() if hasattr(model, "parameters") else list(model)
    for p in params:
        counts.total += p.size
        if p.requires_grad:
            counts.trainable += p.size
    return counts


def init_weights(model, seed, scale=1.0):
    """Deterministic fan-in scaled uniform initialization."""
    model.init(np.random.default_rng(seed), scale)


def freeze(model):
    for p in model.parameters():
        p.requires_grad = False
        p.zero_grad()
