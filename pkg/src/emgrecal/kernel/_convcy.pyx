# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dilated causal convolution kernels (hot path).

Same contract as the numpy fallback in ``_convnp``: inputs arrive left-padded
by (k - 1) * dilation; loops are ordered so the innermost time loop is
stride-1 on both operands and auto-vectorizes.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"

ctypedef fused real:
    float
    double


def conv1d_forward(real[:, :, ::1] xp, real[:, :, ::1] weight,
                   real[::1] bias, int dilation, int t_out):
    cdef Py_ssize_t b = xp.shape[0]
    cdef Py_ssize_t cin = xp.shape[1]
    cdef Py_ssize_t cout = weight.shape[0]
    cdef Py_ssize_t k = weight.shape[2]
    if real is float:
        out_arr = np.empty((b, cout, t_out), dtype=np.float32)
    else:
        out_arr = np.empty((b, cout, t_out), dtype=np.float64)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t ib, co, ci, j, t, off
    cdef real w, acc
    for ib in range(b):
        for co in range(cout):
            acc = bias[co]
            for t in range(t_out):
                out[ib, co, t] = acc
            for ci in range(cin):
                for j in range(k):
                    w = weight[co, ci, j]
                    off = j * dilation
                    for t in range(t_out):
                        out[ib, co, t] += w * xp[ib, ci, t + off]
    return out_arr


def conv1d_backward_weight(real[:, :, ::1] xp, real[:, :, ::1] grad_out,
                           int dilation, int k):
    cdef Py_ssize_t b = xp.shape[0]
    cdef Py_ssize_t cin = xp.shape[1]
    cdef Py_ssize_t cout = grad_out.shape[1]
    cdef Py_ssize_t t_out = grad_out.shape[2]
    if real is float:
        dw_arr = np.zeros((cout, cin, k), dtype=np.float32)
        db_arr = np.zeros(cout, dtype=np.float32)
    else:
        dw_arr = np.zeros((cout, cin, k), dtype=np.float64)
        db_arr = np.zeros(cout, dtype=np.float64)
    cdef real[:, :, ::1] dw = dw_arr
    cdef real[::1] db = db_arr
    cdef Py_ssize_t ib, co, ci, j, t, off
    cdef real acc, bacc
    for ib in range(b):
        for co in range(cout):
            bacc = 0
            for t in range(t_out):
                bacc += grad_out[ib, co, t]
            db[co] += bacc
            for ci in range(cin):
                for j in range(k):
                    off = j * dilation
                    acc = 0
                    for t in range(t_out):
                        acc += grad_out[ib, co, t] * xp[ib, ci, t + off]
                    dw[co, ci, j] += acc
    return dw_arr, db_arr


def conv1d_backward_input(real[:, :, ::1] weight, real[:, :, ::1] grad_out,
                          int dilation, int t_padded):
    cdef Py_ssize_t b = grad_out.shape[0]
    cdef Py_ssize_t cout = weight.shape[0]
    cdef Py_ssize_t cin = weight.shape[1]
    cdef Py_ssize_t k = weight.shape[2]
    cdef Py_ssize_t t_out = grad_out.shape[2]
    if real is float:
        dxp_arr = np.zeros((b, cin, t_padded), dtype=np.float32)
    else:
        dxp_arr = np.zeros((b, cin, t_padded), dtype=np.float64)
    cdef real[:, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t ib, co, ci, j, t, off
    cdef real w
    for ib in range(b):
        for ci in range(cin):
            for co in range(cout):
                for j in range(k):
                    w = weight[co, ci, j]
                    off = j * dilation
                    for t in range(t_out):
                        dxp[ib, ci, t + off] += w * grad_out[ib, co, t]
    return dxp_arr
