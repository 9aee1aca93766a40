# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv kernels: C im2col/col2im packing around BLAS matmuls."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef void _im2col(double[:, :, :, ::1] x, double[:, ::1] cols,
                  int kh, int kw, int stride, int oh, int ow) noexcept nogil:
    # cols: [B*OH*OW, C*kh*kw]
    cdef Py_ssize_t b, c, i, j, p, q, row, col
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1]
    for b in range(nb):
        for i in range(oh):
            for j in range(ow):
                row = (b * oh + i) * ow + j
                col = 0
                for c in range(nc):
                    for p in range(kh):
                        for q in range(kw):
                            cols[row, col] = x[b, c, i * stride + p, j * stride + q]
                            col += 1


cdef void _col2im(double[:, ::1] cols, double[:, :, :, ::1] gx,
                  int kh, int kw, int stride, int oh, int ow) noexcept nogil:
    cdef Py_ssize_t b, c, i, j, p, q, row, col
    cdef Py_ssize_t nb = gx.shape[0], nc = gx.shape[1]
    for b in range(nb):
        for i in range(oh):
            for j in range(ow):
                row = (b * oh + i) * ow + j
                col = 0
                for c in range(nc):
                    for p in range(kh):
                        for q in range(kw):
                            gx[b, c, i * stride + p, j * stride + q] += cols[row, col]
                            col += 1


def conv2d_forward(x, k, int stride):
    cdef int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int f = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef int oh = (h - kh) // stride + 1
    cdef int ow = (w - kw) // stride + 1
    cols = np.empty((b * oh * ow, c * kh * kw), dtype=np.float64)
    _im2col(np.ascontiguousarray(x), cols, kh, kw, stride, oh, ow)
    y = cols @ np.ascontiguousarray(k).reshape(f, -1).T
    return np.ascontiguousarray(
        y.reshape(b, oh, ow, f).transpose(0, 3, 1, 2)
    )


def conv2d_input_grad(gy, k, int stride, int h, int w):
    cdef int b = gy.shape[0], f = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef int c = k.shape[1], kh = k.shape[2], kw = k.shape[3]
    gy_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(b * oh * ow, f)
    cols = np.ascontiguousarray(gy_mat @ np.ascontiguousarray(k).reshape(f, -1))
    gx = np.zeros((b, c, h, w), dtype=np.float64)
    _col2im(cols, gx, kh, kw, stride, oh, ow)
    return gx


def conv2d_kernel_grad(gy, x, int stride, int kh, int kw):
    cdef int b = gy.shape[0], f = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef int c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cols = np.empty((b * oh * ow, c * kh * kw), dtype=np.float64)
    _im2col(np.ascontiguousarray(x), cols, kh, kw, stride, oh, ow)
    gy_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(b * oh * ow, f)
    return (gy_mat.T @ cols).reshape(f, c, kh, kw)
