"""Pure-numpy versions of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Inputs are float64 / complex128 C-contiguous arrays; outputs are fresh arrays.
"""

import numpy as np


def _check_pow2(n):
    if n < 1 or n & (n - 1):
        raise ValueError(f"transform length {n} is not a power of two")


def bit_reverse_permutation(n):
    _check_pow2(n)
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_rows(z, inverse=False):
    """Unnormalized radix-2 DIT transform of every row of a 2-D complex array.

    ``inverse`` flips the twiddle sign (exp(+2πi·jk/n)); no 1/n factor.
    """
    z = np.asarray(z, dtype=np.complex128)
    rows, n = z.shape
    _check_pow2(n)
    out = z[:, bit_reverse_permutation(n)]
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        k = np.arange(half)
        tw = np.cos(2.0 * np.pi * k / m) + 1j * sign * np.sin(2.0 * np.pi * k / m)
        blocks = out.reshape(rows, n // m, m)
        u = blocks[:, :, :half]
        v = blocks[:, :, half:] * tw
        out = np.concatenate([u + v, u - v], axis=2).reshape(rows, n)
        m *= 2
    return out


def fft2_planes(z, inverse=False):
    """Unnormalized 2-D transform of each (h, w) plane of a (planes, h, w) array."""
    z = np.asarray(z, dtype=np.complex128)
    planes, h, w = z.shape
    rows = fft_rows(z.reshape(planes * h, w), inverse).reshape(planes, h, w)
    cols = fft_rows(np.ascontiguousarray(rows.transpose(0, 2, 1)).reshape(planes * w, h), inverse)
    return np.ascontiguousarray(cols.reshape(planes, w, h).transpose(0, 2, 1))


def _tap_range(size_out, size_in, offset):
    # output indices i with 0 <= i + offset < size_in
    lo = max(0, -offset)
    hi = min(size_out, size_in - offset)
    return lo, hi


def dwconv_forward(x, w, pad):
    """Depthwise stride-1 cross-correlation with symmetric zero padding.

    x: (n, c, h, w), w: (c, kh, kw) -> (n, c, h + 2p - kh + 1, w + 2p - kw + 1)
    """
    n, c, h, wd = x.shape
    _, kh, kw = w.shape
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, c, ho, wo))
    for a in range(kh):
        i0, i1 = _tap_range(ho, h, a - pad)
        if i0 >= i1:
            continue
        for b in range(kw):
            j0, j1 = _tap_range(wo, wd, b - pad)
            if j0 >= j1:
                continue
            src = x[:, :, i0 + a - pad:i1 + a - pad, j0 + b - pad:j1 + b - pad]
            out[:, :, i0:i1, j0:j1] += src * w[None, :, a, b, None, None]
    return out


def dwconv_backward(g, x, w, pad):
    n, c, h, wd = x.shape
    _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for a in range(kh):
        i0, i1 = _tap_range(ho, h, a - pad)
        if i0 >= i1:
            continue
        for b in range(kw):
            j0, j1 = _tap_range(wo, wd, b - pad)
            if j0 >= j1:
                continue
            gs = g[:, :, i0:i1, j0:j1]
            sl = (slice(None), slice(None),
                  slice(i0 + a - pad, i1 + a - pad), slice(j0 + b - pad, j1 + b - pad))
            gx[sl] += gs * w[None, :, a, b, None, None]
            gw[:, a, b] = np.einsum("nchw,nchw->c", gs, x[sl])
    return gx, gw


def _sample_coords(off, h, w):
    # absolute, border-clamped sample positions plus in-range masks
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    px = jj[None] + off[:, 0]
    py = ii[None] + off[:, 1]
    inx = (px > 0.0) & (px < w - 1)
    iny = (py > 0.0) & (py < h - 1)
    px = np.clip(px, 0.0, w - 1)
    py = np.clip(py, 0.0, h - 1)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return px - x0, py - y0, x0, x1, y0, y1, inx, iny


def grid_sample_forward(x, off):
    """Bilinear read of x at (row + Δy, col + Δx), positions clamped to the border.

    off: (n, 2, h, w) with channel 0 = Δx (columns), channel 1 = Δy (rows).
    """
    n, c, h, w = x.shape
    fx, fy, x0, x1, y0, y1, _, _ = _sample_coords(off, h, w)
    flat = x.reshape(n, c, h * w)

    def tap(yy, xx):
        idx = (yy * w + xx).reshape(n, 1, h * w)
        return np.take_along_axis(flat, np.broadcast_to(idx, (n, c, h * w)), axis=2).reshape(n, c, h, w)

    fx = fx[:, None]
    fy = fy[:, None]
    v00, v01, v10, v11 = tap(y0, x0), tap(y0, x1), tap(y1, x0), tap(y1, x1)
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)


def grid_sample_backward(g, x, off):
    n, c, h, w = x.shape
    fx, fy, x0, x1, y0, y1, inx, iny = _sample_coords(off, h, w)
    flat = x.reshape(n, c, h * w)
    hw = h * w

    def tap(yy, xx):
        idx = (yy * w + xx).reshape(n, 1, hw)
        return np.take_along_axis(flat, np.broadcast_to(idx, (n, c, hw)), axis=2).reshape(n, c, h, w)

    v00, v01, v10, v11 = tap(y0, x0), tap(y0, x1), tap(y1, x0), tap(y1, x1)
    fxc = fx[:, None]
    fyc = fy[:, None]
    dpx = (1.0 - fyc) * (v01 - v00) + fyc * (v11 - v10)
    dpy = (1.0 - fxc) * (v10 - v00) + fxc * (v11 - v01)
    goff = np.empty_like(off)
    goff[:, 0] = np.where(inx, np.einsum("nchw,nchw->nhw", g, dpx), 0.0)
    goff[:, 1] = np.where(iny, np.einsum("nchw,nchw->nhw", g, dpy), 0.0)

    # scatter into x via one bincount over (n, c, pixel)
    base = (np.arange(n * c) * hw).reshape(n, c, 1)
    gx = np.zeros(n * c * hw)
    for yy, xx, wgt in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
                        (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx)):
        idx = base + (yy * w + xx).reshape(n, 1, hw)
        vals = g.reshape(n, c, hw) * wgt.reshape(n, 1, hw)
        gx += np.bincount(idx.ravel(), weights=vals.ravel(), minlength=n * c * hw)
    return gx.reshape(n, c, h, w), goff
