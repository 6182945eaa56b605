# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures mirror freqfuse.kernels.pykernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, floor, M_PI

cnp.import_array()


cdef inline Py_ssize_t _imax(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return a if a > b else b


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return a if a < b else b


cdef void _fft1d(double* a, Py_ssize_t n, const Py_ssize_t* rev,
                 const double* tw) noexcept nogil:
    # in-place radix-2 DIT on interleaved (re, im) pairs; tw holds the twiddles
    # of every stage back to back: stage m contributes m/2 (re, im) pairs
    cdef Py_ssize_t i, j, k, m, half, start, p, q
    cdef double tr, ti, ur, ui, vr, vi, xr, xi
    cdef const double* t
    for i in range(n):
        j = rev[i]
        if j > i:
            tr = a[2 * i]
            ti = a[2 * i + 1]
            a[2 * i] = a[2 * j]
            a[2 * i + 1] = a[2 * j + 1]
            a[2 * j] = tr
            a[2 * j + 1] = ti
    t = tw
    m = 2
    while m <= n:
        half = m >> 1
        start = 0
        while start < n:
            for k in range(half):
                p = 2 * (start + k)
                q = p + 2 * half
                tr = t[2 * k]
                ti = t[2 * k + 1]
                xr = a[q]
                xi = a[q + 1]
                vr = xr * tr - xi * ti
                vi = xr * ti + xi * tr
                ur = a[p]
                ui = a[p + 1]
                a[p] = ur + vr
                a[p + 1] = ui + vi
                a[q] = ur - vr
                a[q + 1] = ui - vi
            start += m
        t += 2 * half
        m <<= 1


cdef _plan(Py_ssize_t n, bint inverse):
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"transform length {n} is not a power of two")
    cdef Py_ssize_t bits = 0, i, b, r
    while (1 << bits) < n:
        bits += 1
    rev = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] rv = rev
    for i in range(n):
        r = 0
        for b in range(bits):
            r |= ((i >> b) & 1) << (bits - 1 - b)
        rv[i] = r
    sign = 1.0 if inverse else -1.0
    stages = [np.zeros(0)]
    m = 2
    while m <= n:
        k = np.arange(m // 2)
        stages.append(np.cos(2.0 * np.pi * k / m) + 1j * sign * np.sin(2.0 * np.pi * k / m))
        m *= 2
    tw = np.ascontiguousarray(np.concatenate(stages).astype(np.complex128).view(np.float64))
    if tw.size == 0:
        tw = np.zeros(2)
    return rev, tw


def fft_rows(z, bint inverse=False):
    out_arr = np.array(z, dtype=np.complex128, order="C", copy=True)
    cdef double[:, ::1] out = out_arr.view(np.float64)
    cdef Py_ssize_t rows = out.shape[0], n = out.shape[1] // 2, r
    rev, tw = _plan(n, inverse)
    cdef Py_ssize_t[::1] rv = rev
    cdef double[::1] twv = tw
    with nogil:
        for r in range(rows):
            _fft1d(&out[r, 0], n, &rv[0], &twv[0])
    return out_arr


def fft2_planes(z, bint inverse=False):
    """Unnormalized 2-D transform of each (h, w) plane of a (planes, h, w) array."""
    out_arr = np.array(z, dtype=np.complex128, order="C", copy=True)
    cdef double[:, :, ::1] out = out_arr.view(np.float64)
    cdef Py_ssize_t planes = out.shape[0], h = out.shape[1], w = out.shape[2] // 2, p, i, j
    rev_w, tw_w = _plan(w, inverse)
    rev_h, tw_h = _plan(h, inverse)
    cdef Py_ssize_t[::1] rw = rev_w
    cdef Py_ssize_t[::1] rh = rev_h
    cdef double[::1] tww = tw_w
    cdef double[::1] twh = tw_h
    cdef double[::1] col = np.empty(2 * h)
    with nogil:
        for p in range(planes):
            for i in range(h):
                _fft1d(&out[p, i, 0], w, &rw[0], &tww[0])
            for j in range(w):
                for i in range(h):
                    col[2 * i] = out[p, i, 2 * j]
                    col[2 * i + 1] = out[p, i, 2 * j + 1]
                _fft1d(&col[0], h, &rh[0], &twh[0])
                for i in range(h):
                    out[p, i, 2 * j] = col[2 * i]
                    out[p, i, 2 * j + 1] = col[2 * i + 1]
    return out_arr


def dwconv_forward(x, w, Py_ssize_t pad):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef Py_ssize_t kh = wv.shape[1], kw = wv.shape[2]
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1
    out_arr = np.zeros((n, c, ho, wo))
    cdef double[:, :, :, ::1] ov = out_arr
    cdef Py_ssize_t b_, ch, a, bb, i, j, i0, i1, j0, j1, di, dj
    cdef double wt
    with nogil:
        for b_ in range(n):
            for ch in range(c):
                for a in range(kh):
                    di = a - pad
                    i0 = _imax(0, -di)
                    i1 = _imin(ho, h - di)
                    if i0 >= i1:
                        continue
                    for bb in range(kw):
                        dj = bb - pad
                        j0 = _imax(0, -dj)
                        j1 = _imin(wo, wd - dj)
                        if j0 >= j1:
                            continue
                        wt = wv[ch, a, bb]
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                ov[b_, ch, i, j] += wt * xv[b_, ch, i + di, j + dj]
    return out_arr


def dwconv_backward(g, x, w, Py_ssize_t pad):
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef Py_ssize_t kh = wv.shape[1], kw = wv.shape[2]
    cdef Py_ssize_t ho = gv.shape[2], wo = gv.shape[3]
    gx_arr = np.zeros((n, c, h, wd))
    gw_arr = np.zeros((c, kh, kw))
    cdef double[:, :, :, ::1] gxv = gx_arr
    cdef double[:, :, ::1] gwv = gw_arr
    cdef Py_ssize_t b_, ch, a, bb, i, j, i0, i1, j0, j1, di, dj
    cdef double wt, acc, gval
    with nogil:
        for b_ in range(n):
            for ch in range(c):
                for a in range(kh):
                    di = a - pad
                    i0 = _imax(0, -di)
                    i1 = _imin(ho, h - di)
                    if i0 >= i1:
                        continue
                    for bb in range(kw):
                        dj = bb - pad
                        j0 = _imax(0, -dj)
                        j1 = _imin(wo, wd - dj)
                        if j0 >= j1:
                            continue
                        wt = wv[ch, a, bb]
                        acc = 0.0
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                gval = gv[b_, ch, i, j]
                                gxv[b_, ch, i + di, j + dj] += wt * gval
                                acc += gval * xv[b_, ch, i + di, j + dj]
                        gwv[ch, a, bb] += acc
    return gx_arr, gw_arr


cdef inline void _coords(double p, Py_ssize_t size, Py_ssize_t* i0, Py_ssize_t* i1,
                         double* frac, bint* inside) noexcept nogil:
    inside[0] = p > 0.0 and p < size - 1
    if p < 0.0:
        p = 0.0
    elif p > size - 1:
        p = size - 1
    i0[0] = <Py_ssize_t>floor(p)
    i1[0] = _imin(i0[0] + 1, size - 1)
    frac[0] = p - i0[0]


def grid_sample_forward(x, off):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] dv = np.ascontiguousarray(off, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    out_arr = np.empty((n, c, h, w))
    cdef double[:, :, :, ::1] ov = out_arr
    cdef Py_ssize_t b_, ch, i, j, x0, x1, y0, y1
    cdef double fx, fy
    cdef bint inx, iny
    with nogil:
        for b_ in range(n):
            for i in range(h):
                for j in range(w):
                    _coords(j + dv[b_, 0, i, j], w, &x0, &x1, &fx, &inx)
                    _coords(i + dv[b_, 1, i, j], h, &y0, &y1, &fy, &iny)
                    for ch in range(c):
                        ov[b_, ch, i, j] = (
                            (1.0 - fy) * ((1.0 - fx) * xv[b_, ch, y0, x0] + fx * xv[b_, ch, y0, x1])
                            + fy * ((1.0 - fx) * xv[b_, ch, y1, x0] + fx * xv[b_, ch, y1, x1]))
    return out_arr


def grid_sample_backward(g, x, off):
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] dv = np.ascontiguousarray(off, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    gx_arr = np.zeros((n, c, h, w))
    goff_arr = np.zeros((n, 2, h, w))
    cdef double[:, :, :, ::1] gxv = gx_arr
    cdef double[:, :, :, ::1] gov = goff_arr
    cdef Py_ssize_t b_, ch, i, j, x0, x1, y0, y1
    cdef double fx, fy, gval, v00, v01, v10, v11, ax, ay
    cdef bint inx, iny
    with nogil:
        for b_ in range(n):
            for i in range(h):
                for j in range(w):
                    _coords(j + dv[b_, 0, i, j], w, &x0, &x1, &fx, &inx)
                    _coords(i + dv[b_, 1, i, j], h, &y0, &y1, &fy, &iny)
                    ax = 0.0
                    ay = 0.0
                    for ch in range(c):
                        gval = gv[b_, ch, i, j]
                        v00 = xv[b_, ch, y0, x0]
                        v01 = xv[b_, ch, y0, x1]
                        v10 = xv[b_, ch, y1, x0]
                        v11 = xv[b_, ch, y1, x1]
                        ax += gval * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10))
                        ay += gval * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01))
                        gxv[b_, ch, y0, x0] += gval * (1.0 - fy) * (1.0 - fx)
                        gxv[b_, ch, y0, x1] += gval * (1.0 - fy) * fx
                        gxv[b_, ch, y1, x0] += gval * fy * (1.0 - fx)
                        gxv[b_, ch, y1, x1] += gval * fy * fx
                    gov[b_, 0, i, j] = ax if inx else 0.0
                    gov[b_, 1, i, j] = ay if iny else 0.0
    return gx_arr, goff_arr
