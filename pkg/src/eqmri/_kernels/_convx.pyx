# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels.

Same contract as the NumPy fallback in ``_convpy``: channels-first float64,
cross-correlation with circular boundary anchored at ``k // 2``. Loops are
serial so accumulation order is fixed and results are reproducible.
"""

import numpy as np

cimport cython

BACKEND = "compiled"


def _check_conv_args(x, w):
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"expected x (cin,h,w) and w (cout,cin,kh,kw), got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"input channels {x.shape[0]} do not match kernel channels {w.shape[1]}")
    if w.shape[2] > x.shape[1] or w.shape[3] > x.shape[2]:
        raise ValueError(f"kernel {w.shape[2:]} larger than image {x.shape[1:]}")


cdef inline Py_ssize_t _wrap(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if i < 0:
        return i + n
    if i >= n:
        return i - n
    return i


def conv2d(x, w, b=None):
    """Circularly padded cross-correlation of x (cin,h,w) with w (cout,cin,kh,kw)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    _check_conv_args(x, w)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, :, ::1] wv = w
    cdef Py_ssize_t cin = xv.shape[0], h = xv.shape[1], ww = xv.shape[2]
    cdef Py_ssize_t cout = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t ch = kh // 2, cw = kw // 2
    y = np.zeros((cout, h, ww))
    cdef double[:, :, ::1] yv = y
    cdef Py_ssize_t o, i, a, c, p, q, pp, qq
    cdef double wgt
    with nogil:
        for o in range(cout):
            for i in range(cin):
                for a in range(kh):
                    for c in range(kw):
                        wgt = wv[o, i, a, c]
                        if wgt == 0.0:
                            continue
                        for p in range(h):
                            pp = _wrap(p + a - ch, h)
                            for q in range(ww):
                                qq = _wrap(q + c - cw, ww)
                                yv[o, p, q] += wgt * xv[i, pp, qq]
    if b is not None:
        y += np.asarray(b, dtype=np.float64)[:, None, None]
    return y


def conv2d_input_grad(gy, w):
    """Adjoint of conv2d in its input: gx[i] = sum_o w[o,i] star gy[o]."""
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if gy.shape[0] != w.shape[0]:
        raise ValueError(f"output channels {gy.shape[0]} do not match kernel channels {w.shape[0]}")
    cdef double[:, :, ::1] gv = gy
    cdef double[:, :, :, ::1] wv = w
    cdef Py_ssize_t cout = gv.shape[0], h = gv.shape[1], ww = gv.shape[2]
    cdef Py_ssize_t cin = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t ch = kh // 2, cw = kw // 2
    gx = np.zeros((cin, h, ww))
    cdef double[:, :, ::1] xv = gx
    cdef Py_ssize_t o, i, a, c, p, q, pp, qq
    cdef double wgt
    with nogil:
        for o in range(cout):
            for i in range(cin):
                for a in range(kh):
                    for c in range(kw):
                        wgt = wv[o, i, a, c]
                        if wgt == 0.0:
                            continue
                        for p in range(h):
                            pp = _wrap(p + a - ch, h)
                            for q in range(ww):
                                qq = _wrap(q + c - cw, ww)
                                xv[i, pp, qq] += wgt * gv[o, p, q]
    return gx


def conv2d_weight_grad(x, gy, kh, kw):
    """Gradient of sum(gy * conv2d(x, w)) in w (and the bias)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, ::1] gv = gy
    cdef Py_ssize_t cin = xv.shape[0], h = xv.shape[1], ww = xv.shape[2]
    cdef Py_ssize_t cout = gv.shape[0]
    cdef Py_ssize_t kh_ = kh, kw_ = kw
    cdef Py_ssize_t ch = kh_ // 2, cw = kw_ // 2
    gw = np.zeros((cout, cin, kh_, kw_))
    gb = np.zeros(cout)
    cdef double[:, :, :, ::1] gwv = gw
    cdef double[::1] gbv = gb
    cdef Py_ssize_t o, i, a, c, p, q, pp, qq
    cdef double acc
    with nogil:
        for o in range(cout):
            for i in range(cin):
                for a in range(kh_):
                    for c in range(kw_):
                        acc = 0.0
                        for p in range(h):
                            pp = _wrap(p + a - ch, h)
                            for q in range(ww):
                                qq = _wrap(q + c - cw, ww)
                                acc += gv[o, p, q] * xv[i, pp, qq]
                        gwv[o, i, a, c] = acc
        for o in range(cout):
            acc = 0.0
            for p in range(h):
                for q in range(ww):
                    acc += gv[o, p, q]
            gbv[o] = acc
    return gw, gb
