"""Pure NumPy convolution kernels (fallback backend).

Convention shared with the compiled backend: channels-first float64 arrays,
cross-correlation with circular boundary, odd or even kernel sizes anchored
at ``k // 2``:

    y[o, p, q] = b[o] + sum_{i,a,b} w[o, i, a, b] * x[i, p + a - kh//2, q + b - kw//2]

with all spatial indices taken modulo the image size.
"""

import numpy as np

BACKEND = "python"


def _check_conv_args(x, w):
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"expected x (cin,h,w) and w (cout,cin,kh,kw), got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"input channels {x.shape[0]} do not match kernel channels {w.shape[1]}")
    if w.shape[2] > x.shape[1] or w.shape[3] > x.shape[2]:
        raise ValueError(f"kernel {w.shape[2:]} larger than image {x.shape[1:]}")


def conv2d(x, w, b=None):
    """Circularly padded cross-correlation of x (cin,h,w) with w (cout,cin,kh,kw)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    _check_conv_args(x, w)
    kh, kw = w.shape[2], w.shape[3]
    ch, cw = kh // 2, kw // 2
    y = np.zeros((w.shape[0], x.shape[1], x.shape[2]))
    for a in range(kh):
        for bb in range(kw):
            shifted = np.roll(x, (ch - a, cw - bb), axis=(1, 2))
            y += np.einsum("oi,ihw->ohw", w[:, :, a, bb], shifted)
    if b is not None:
        y += np.asarray(b, dtype=np.float64)[:, None, None]
    return y


def conv2d_input_grad(gy, w):
    """Adjoint of conv2d in its input: gx[i] = sum_o w[o,i] star gy[o]."""
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if gy.shape[0] != w.shape[0]:
        raise ValueError(f"output channels {gy.shape[0]} do not match kernel channels {w.shape[0]}")
    kh, kw = w.shape[2], w.shape[3]
    ch, cw = kh // 2, kw // 2
    gx = np.zeros((w.shape[1], gy.shape[1], gy.shape[2]))
    for a in range(kh):
        for bb in range(kw):
            shifted = np.roll(gy, (a - ch, bb - cw), axis=(1, 2))
            gx += np.einsum("oi,ohw->ihw", w[:, :, a, bb], shifted)
    return gx


def conv2d_weight_grad(x, gy, kh, kw):
    """Gradient of sum(gy * conv2d(x, w)) in w (and the bias)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    ch, cw = kh // 2, kw // 2
    gw = np.empty((gy.shape[0], x.shape[0], kh, kw))
    for a in range(kh):
        for bb in range(kw):
            shifted = np.roll(x, (ch - a, cw - bb), axis=(1, 2))
            gw[:, :, a, bb] = np.einsum("ohw,ihw->oi", gy, shifted)
    gb = gy.sum(axis=(1, 2))
    return gw, gb
