"""2-D spatial DFT of rank-4 tensors and complex pointwise arithmetic.

Forward transforms are unnormalized; inverses carry the 1/(h·w) factor.
Spatial sizes must be powers of two (radix-2 Cooley-Tukey, rows then columns).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, emit

MAG_EPS = 1e-12


class Spectrum:
    """Complex (n, c, h, w) array; participates in graphs like a Tensor."""

    __slots__ = ("z", "grad", "requires_grad")

    def __init__(self, z, requires_grad=False):
        z = np.asarray(z, dtype=np.complex128)
        if z.ndim != 4:
            raise ShapeError(f"spectra are rank 4, got shape {z.shape}")
        self.z = z
        self.grad = None
        self.requires_grad = requires_grad

    @classmethod
    def from_parts(cls, re, im):
        return cls(np.asarray(re, dtype=np.float64) + 1j * np.asarray(im, dtype=np.float64))

    @property
    def shape(self):
        return self.z.shape

    @property
    def data(self):
        return self.z

    @property
    def re(self):
        return self.z.real

    @property
    def im(self):
        return self.z.imag

    def __repr__(self):
        return f"Spectrum(shape={self.shape})"


def is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


def check_spatial(shape, what="fft2"):
    h, w = shape[2], shape[3]
    if not (is_pow2(h) and is_pow2(w)):
        raise ShapeError(
            f"{what}: spatial size {h}x{w} is not a power of two; "
            "pad or resize the feature map upstream")


def _dft2(z, inverse=False):
    """Unnormalized 2-D transform over the last two axes of a complex array."""
    n, c, h, w = z.shape
    if z.size == 0:
        return z.astype(np.complex128)
    return kernels.fft2_planes(z.reshape(n * c, h, w), inverse).reshape(n, c, h, w)


def fft2(x: Tensor) -> Spectrum:
    check_spatial(x.shape)
    out = Spectrum(_dft2(x.data.astype(np.complex128)))
    # adjoint of the unnormalized DFT is the unnormalized inverse
    return emit(out, (x,), lambda g: (_dft2(g, inverse=True).real,))


def ifft2_complex(s: Spectrum) -> Spectrum:
    check_spatial(s.shape, "ifft2")
    hw = s.shape[2] * s.shape[3]
    out = Spectrum(_dft2(s.z, inverse=True) / hw)
    return emit(out, (s,), lambda g: (_dft2(g) / hw,))


def ifft2(s: Spectrum) -> Tensor:
    """Real part of the normalized inverse transform."""
    check_spatial(s.shape, "ifft2")
    hw = s.shape[2] * s.shape[3]
    out = Tensor(_dft2(s.z, inverse=True).real / hw)
    return emit(out, (s,), lambda g: (_dft2(g.astype(np.complex128)) / hw,))


def real(s: Spectrum) -> Tensor:
    return emit(Tensor(s.z.real.copy()), (s,), lambda g: (g.astype(np.complex128),))


def imag(s: Spectrum) -> Tensor:
    return emit(Tensor(s.z.imag.copy()), (s,), lambda g: (1j * g,))


def cmul(s: Spectrum, m: Tensor) -> Spectrum:
    """Scale re and im by a real factor of shape (n, c, 1, 1) or (n, c, h, w)."""
    n, c, h, w = s.shape
    if m.shape not in ((n, c, 1, 1), (n, c, h, w)):
        raise ShapeError(f"cmul: factor shape {m.shape} fits neither {(n, c, 1, 1)} nor {s.shape}")
    md, sz = m.data, s.z
    per_channel = m.shape[2:] == (1, 1) and (h, w) != (1, 1)

    def rule(g):
        gm = (np.conj(sz) * g).real
        if per_channel:
            gm = gm.sum(axis=(2, 3), keepdims=True)
        return g * md, gm

    return emit(Spectrum(sz * md), (s, m), rule)


def cmul_spec(a: Spectrum, b: Spectrum) -> Spectrum:
    if a.shape != b.shape:
        raise ShapeError(f"cmul_spec: shapes {a.shape} and {b.shape} differ")
    az, bz = a.z, b.z
    return emit(Spectrum(az * bz), (a, b), lambda g: (g * np.conj(bz), g * np.conj(az)))


def _magnitude_backward(g, z, mag):
    return g * z / np.maximum(mag, MAG_EPS)


def magnitude(s: Spectrum) -> Tensor:
    z = s.z
    mag = np.abs(z)
    return emit(Tensor(mag), (s,), lambda g: (_magnitude_backward(g, z, mag),))
