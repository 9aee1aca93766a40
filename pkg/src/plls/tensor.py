"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Covers exactly what the MLP/conv VAEs and the PPO losses need: matmul,
valid strided conv2d and its adjoint, a handful of elementwise maps,
reductions, slicing/concat, and limited (bias-style) broadcasting.
Graphs are define-by-run and rebuilt on every forward pass.
"""

from __future__ import annotations

import math

import numpy as np

from . import conv_backend

DTYPE = np.float64

LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """Input outside the op's mathematical domain (e.g. log of <= 0)."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (e.g. backward on a non-scalar)."""


class Tensor:
    """Dense float array node in a reverse-mode gradient graph.

    ``grad`` is allocated lazily and only ever written for leaf tensors
    created with ``requires_grad=True``; repeated backward passes
    accumulate additively until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph ---------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        ``self`` must be a scalar. Intermediate gradients live in a local
        map so that calling backward twice on the same graph exactly
        doubles the leaf gradients.
        """
        if self.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            gy = grads.pop(id(node), None)
            if gy is None:
                continue
            if node._backward is not None:
                for parent, gp in zip(node._parents, node._backward(gy)):
                    if not parent.requires_grad or gp is None:
                        continue
                    acc = grads.get(id(parent))
                    if acc is None:
                        grads[id(parent)] = gp.copy() if gp.base is not None or gp is gy else gp
                    else:
                        acc += gp
            elif node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += gy

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")

    def backward(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)

    return _node(data, (a, b), backward)


def neg(a):
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda gy: (-gy,))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")

    def backward(gy):
        return (
            _unbroadcast(gy * b.data, a.shape),
            _unbroadcast(gy * a.data, b.shape),
        )

    return _node(data, (a, b), backward)


def power(a, exponent):
    a = _as_tensor(a)
    exponent = float(exponent)
    data = a.data ** exponent

    def backward(gy):
        return (gy * exponent * a.data ** (exponent - 1.0),)

    return _node(data, (a,), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(gy):
        return gy @ b.data.T, a.data.T @ gy

    return _node(data, (a, b), backward)


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda gy: (gy.T,))


def reshape(a, *shape):
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    orig = a.shape
    data = a.data.reshape(shape)
    return _node(data, (a,), lambda gy: (gy.reshape(orig),))


def take(a, index):
    a = _as_tensor(a)
    data = a.data[index]

    def backward(gy):
        gx = np.zeros_like(a.data)
        gx[index] = gy
        return (gx,)

    return _node(data, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis if axis >= 0 else t.ndim + axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(gy):
        return tuple(np.ascontiguousarray(g) for g in np.split(gy, splits, axis=axis))

    return _node(data, tuple(tensors), backward)


# -- reductions --------------------------------------------------------


def tsum(a, axis=None):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis)

    def backward(gy):
        if axis is None:
            return (np.broadcast_to(gy, a.shape).copy(),)
        g = np.expand_dims(gy, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(data, (a,), backward)


def tmean(a, axis=None):
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


# -- elementwise maps --------------------------------------------------


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda gy: (gy * mask,))


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)
    return _node(data, (a,), lambda gy: (gy * (1.0 - data * data),))


def sigmoid(a):
    a = _as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))
    return _node(data, (a,), lambda gy: (gy * data * (1.0 - data),))


def exp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)
    return _node(data, (a,), lambda gy: (gy * data,))


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    return _node(np.log(a.data), (a,), lambda gy: (gy / a.data,))


def softplus(a):
    a = _as_tensor(a)
    # log(1 + e^x), evaluated stably for large |x|
    data = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _node(data, (a,), lambda gy: (gy * sig,))


ELEMENTWISE = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "softplus": softplus,
}


def elementwise(op, a):
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}, expected one of {sorted(ELEMENTWISE)}")
    return fn(a)


# -- piecewise ---------------------------------------------------------


def minimum(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(gy):
        return (
            _unbroadcast(gy * take_a, a.shape),
            _unbroadcast(gy * ~take_a, b.shape),
        )

    return _node(data, (a, b), backward)


def clip(a, lo, hi):
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(data, (a,), lambda gy: (gy * mask,))


# -- convolution -------------------------------------------------------


def _check_conv_shapes(x, k, stride, op):
    if x.ndim not in (3, 4):
        raise ShapeError(f"{op}: input must be CxHxW or BxCxHxW, got {x.shape}")
    if k.ndim != 4:
        raise ShapeError(f"{op}: kernels must be FxCxkxk, got {k.shape}")
    if stride < 1:
        raise ShapeError(f"{op}: stride must be positive, got {stride}")
    if x.shape[-3] != k.shape[1]:
        raise ShapeError(
            f"{op}: channel mismatch, input {x.shape} vs kernels {k.shape}"
        )


def conv2d(x, kernels, stride=1):
    """Valid (no-padding) cross-correlation; accepts 3-D or batched 4-D input."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    _check_conv_shapes(x, kernels, stride, "conv2d")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    kh, kw = kernels.shape[2], kernels.shape[3]
    if xd.shape[2] < kh or xd.shape[3] < kw:
        raise ShapeError(
            f"conv2d: kernel {kernels.shape} larger than input {x.shape}"
        )
    yd = conv_backend.conv2d_forward(xd, kernels.data, stride)

    def backward(gy):
        gyb = gy[None] if single else gy
        gx = conv_backend.conv2d_input_grad(
            gyb, kernels.data, stride, xd.shape[2], xd.shape[3]
        )
        gk = conv_backend.conv2d_kernel_grad(gyb, xd, stride, kh, kw)
        return (gx[0] if single else gx), gk

    return _node(yd[0] if single else yd, (x, kernels), backward)


def deconv2d(x, kernels, stride=1):
    """Adjoint (transpose) of conv2d with the same stride.

    Output spatial size is (H-1)*stride + k. Kernel layout matches the
    conv it transposes: F x C x k x k with F the *input* channel count.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    if x.ndim not in (3, 4):
        raise ShapeError(f"deconv2d: input must be FxHxW or BxFxHxW, got {x.shape}")
    if kernels.ndim != 4:
        raise ShapeError(f"deconv2d: kernels must be FxCxkxk, got {kernels.shape}")
    if stride < 1:
        raise ShapeError(f"deconv2d: stride must be positive, got {stride}")
    if x.shape[-3] != kernels.shape[0]:
        raise ShapeError(
            f"deconv2d: channel mismatch, input {x.shape} vs kernels {kernels.shape}"
        )
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    kh, kw = kernels.shape[2], kernels.shape[3]
    oh = (xd.shape[2] - 1) * stride + kh
    ow = (xd.shape[3] - 1) * stride + kw
    yd = conv_backend.conv2d_input_grad(xd, kernels.data, stride, oh, ow)

    def backward(gy):
        gyb = gy[None] if single else gy
        gx = conv_backend.conv2d_forward(gyb, kernels.data, stride)
        gk = conv_backend.conv2d_kernel_grad(xd, gyb, stride, kh, kw)
        return (gx[0] if single else gx), gk

    return _node(yd[0] if single else yd, (x, kernels), backward)
