"""Pure-numpy conv kernels (fallback backend).

All three primitives decompose the convolution over the kh*kw kernel
offsets; each offset is a strided slice plus one einsum, so the inner
loops run inside BLAS instead of Python.

Layouts: input B x C x H x W, kernels F x C x kh x kw, output B x F x OH x OW,
valid (no-padding) cross-correlation with OH = (H - kh)//stride + 1.
"""

import numpy as np


def _out_size(h, w, kh, kw, stride):
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def conv2d_forward(x, k, stride):
    b, c, h, w = x.shape
    f, _, kh, kw = k.shape
    oh, ow = _out_size(h, w, kh, kw, stride)
    y = np.zeros((b, f, oh, ow), dtype=x.dtype)
    for p in range(kh):
        for q in range(kw):
            xs = x[:, :, p : p + stride * oh : stride, q : q + stride * ow : stride]
            y += np.einsum("fc,bcij->bfij", k[:, :, p, q], xs, optimize=True)
    return y


def conv2d_input_grad(gy, k, stride, h, w):
    b, f, oh, ow = gy.shape
    _, c, kh, kw = k.shape
    gx = np.zeros((b, c, h, w), dtype=gy.dtype)
    for p in range(kh):
        for q in range(kw):
            gx[:, :, p : p + stride * oh : stride, q : q + stride * ow : stride] += (
                np.einsum("fc,bfij->bcij", k[:, :, p, q], gy, optimize=True)
            )
    return gx


def conv2d_kernel_grad(gy, x, stride, kh, kw):
    b, f, oh, ow = gy.shape
    _, c, h, w = x.shape
    gk = np.zeros((f, c, kh, kw), dtype=gy.dtype)
    for p in range(kh):
        for q in range(kw):
            xs = x[:, :, p : p + stride * oh : stride, q : q + stride * ow : stride]
            gk[:, :, p, q] = np.einsum("bfij,bcij->fc", gy, xs, optimize=True)
    return gk
