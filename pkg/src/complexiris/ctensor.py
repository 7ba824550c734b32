"""Split-plane complex tensors.

A :class:`ComplexTensor` keeps the real and imaginary parts in two separate
real arrays of identical shape. Feature maps use the (H, W, C) layout, or
(N, H, W, C) for batches; convolution kernels use (kH, kW, Cin, Cout).
"""
from __future__ import annotations

import numpy as np

from . import fft as _fft

DTYPES = {32: np.float32, 64: np.float64}


def resolve_dtype(precision) -> np.dtype:
    if precision in DTYPES:
        return np.dtype(DTYPES[precision])
    return np.dtype(precision)


class ComplexTensor:
    """Dense complex array stored as paired real / imaginary planes.

    Instances are treated as immutable by every function in the package;
    operations always return new tensors.
    """

    __slots__ = ("re", "im")

    def __init__(self, re, im=None, dtype=None):
        re = np.asarray(re)
        if dtype is None:
            dtype = re.dtype if re.dtype in (np.float32, np.float64) else np.float64
        re = np.asarray(re, dtype=dtype, order="C")
        if im is None:
            im = np.zeros_like(re)
        else:
            im = np.asarray(im, dtype=dtype, order="C")
        if re.shape != im.shape:
            raise ValueError(f"real plane shape {re.shape} != imaginary plane shape {im.shape}")
        self.re = re
        self.im = im

    # construction -------------------------------------------------------
    @classmethod
    def from_complex(cls, z, dtype=None):
        z = np.asarray(z)
        if dtype is None:
            dtype = np.float32 if z.dtype == np.complex64 else np.float64
        return cls(z.real, z.imag, dtype=dtype)

    @classmethod
    def zeros(cls, shape, dtype=np.float64):
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype))

    @classmethod
    def scalar(cls, re, im=0.0, dtype=np.float64):
        return cls(np.array(re, dtype), np.array(im, dtype))

    def to_complex(self) -> np.ndarray:
        ctype = np.complex64 if self.re.dtype == np.float32 else np.complex128
        out = np.empty(self.re.shape, ctype)
        out.real = self.re
        out.imag = self.im
        return out

    def astype(self, dtype) -> "ComplexTensor":
        return ComplexTensor(self.re, self.im, dtype=resolve_dtype(dtype))

    def copy(self) -> "ComplexTensor":
        return ComplexTensor(self.re.copy(), self.im.copy())

    # properties ---------------------------------------------------------
    @property
    def shape(self):
        return self.re.shape

    @property
    def ndim(self):
        return self.re.ndim

    @property
    def size(self):
        return self.re.size

    @property
    def dtype(self):
        return self.re.dtype

    def __len__(self):
        return len(self.re)

    def __getitem__(self, idx):
        return ComplexTensor(self.re[idx], self.im[idx])

    def reshape(self, *shape):
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape}, dtype={self.dtype})"

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return c_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return c_sub(self, other)

    def __rsub__(self, other):
        return c_sub(_as_ct(other, self.dtype), self)

    def __mul__(self, other):
        return c_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return ComplexTensor(-self.re, -self.im)

    def conj(self):
        return ComplexTensor(self.re, -self.im)

    def abs(self):
        return c_abs(self)

    def angle(self):
        return c_arg(self)

    def allclose(self, other, rtol=1e-10, atol=0.0):
        return (np.allclose(self.re, other.re, rtol=rtol, atol=atol)
                and np.allclose(self.im, other.im, rtol=rtol, atol=atol))


def _as_ct(x, dtype=np.float64):
    if isinstance(x, ComplexTensor):
        return x
    if np.isscalar(x) or np.ndim(x) == 0:
        z = complex(x)
        return ComplexTensor(np.array(z.real, dtype), np.array(z.imag, dtype))
    raise TypeError(f"expected ComplexTensor or scalar, got {type(x).__name__}")


def _check_pair(a, b, opname):
    a = _as_ct(a)
    b = _as_ct(b, a.dtype)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def c_add(a, b) -> ComplexTensor:
    a, b = _check_pair(a, b, "c_add")
    return ComplexTensor(a.re + b.re, a.im + b.im)


def c_sub(a, b) -> ComplexTensor:
    a, b = _check_pair(a, b, "c_sub")
    return ComplexTensor(a.re - b.re, a.im - b.im)


def c_mul(a, b) -> ComplexTensor:
    """Elementwise (x1 + i y1)(x2 + i y2) = (x1 x2 - y1 y2) + i (x1 y2 + y1 x2)."""
    a, b = _check_pair(a, b, "c_mul")
    return ComplexTensor(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)


def c_abs(a: ComplexTensor) -> np.ndarray:
    return np.hypot(a.re, a.im)


def c_arg(a: ComplexTensor) -> np.ndarray:
    # atan2(0, 0) is 0 and atan2(+0, -1) is pi, so the range is (-pi, pi].
    # Negative zeros would map to -pi; normalise them first.
    return np.arctan2(a.im + 0.0, a.re + 0.0)


def _default_axes(ndim):
    if ndim < 2:
        raise ValueError("fft2 needs at least 2 dimensions")
    return (0, 1) if ndim == 2 else (ndim - 3, ndim - 2)


def fft2(a: ComplexTensor, axes=None) -> ComplexTensor:
    """Unnormalised 2-D DFT over the spatial axes (H, W).

    ``axes`` defaults to (0, 1) for a plain 2-D array and to the (H, W)
    axes of an (..., H, W, C) feature map otherwise.
    """
    axes = _default_axes(a.ndim) if axes is None else axes
    return ComplexTensor.from_complex(_fft.fftn(a.to_complex(), axes), dtype=a.dtype)


def ifft2(a: ComplexTensor, axes=None) -> ComplexTensor:
    """Inverse of :func:`fft2`; carries the 1/(H W) factor."""
    axes = _default_axes(a.ndim) if axes is None else axes
    return ComplexTensor.from_complex(_fft.ifftn(a.to_complex(), axes), dtype=a.dtype)
