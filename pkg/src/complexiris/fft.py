"""Discrete Fourier transforms for arbitrary lengths.

Lengths of the form ``m * 2**k`` with a small odd factor ``m`` use a direct
DFT of size ``m`` (times a few powers of two) followed by vectorised radix-2
butterflies. Anything with a large odd factor (e.g. primes) goes through
Bluestein's chirp-z algorithm on a power-of-two grid.
"""
import numpy as np

# odd factors up to this size are handled with a dense DFT matrix
_DIRECT_MAX = 64


def _dft_matrix(n, ctype):
    k = np.arange(n)
    # reduce k*j mod n before scaling so large products keep full precision
    return np.exp(-2j * np.pi * ((k[:, None] * k[None, :]) % n) / n).astype(ctype)


def _fft_last_mixed(x):
    n = x.shape[-1]
    base = n
    while base % 2 == 0 and base > 32:
        base //= 2
    stride = n // base
    lead = x.shape[:-1]
    # column c of X holds the subsequence x[c], x[c + stride], ...
    X = x.reshape(lead + (base, stride))
    X = np.matmul(_dft_matrix(base, x.dtype), X)
    while X.shape[-2] < n:
        half = X.shape[-1] // 2
        even = X[..., :half]
        odd = X[..., half:]
        m = X.shape[-2]
        tw = np.exp(-1j * np.pi * np.arange(m) / m).astype(x.dtype)[:, None]
        odd = tw * odd
        X = np.concatenate([even + odd, even - odd], axis=-2)
    return X.reshape(lead + (n,))


def _next_pow2(n):
    return 1 << (int(n) - 1).bit_length()


def _bluestein_last(x):
    n = x.shape[-1]
    m = _next_pow2(2 * n - 1)
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n).astype(x.dtype)
    a = np.zeros(x.shape[:-1] + (m,), x.dtype)
    a[..., :n] = x * chirp
    b = np.zeros(m, x.dtype)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    conv = _ifft_last(_fft_last(a) * _fft_last(b))
    return conv[..., :n] * chirp


def _odd_part(n):
    while n % 2 == 0:
        n //= 2
    return n


def _fft_last(x):
    n = x.shape[-1]
    if n == 0:
        raise ValueError("FFT over a zero-sized axis")
    if _odd_part(n) <= _DIRECT_MAX:
        return _fft_last_mixed(x)
    return _bluestein_last(x)


def _ifft_last(x):
    n = x.shape[-1]
    return np.conj(_fft_last(np.conj(x))) / n


def _promote(x):
    x = np.asarray(x)
    if x.dtype in (np.complex64, np.complex128):
        return x
    if x.dtype == np.float32:
        return x.astype(np.complex64)
    return x.astype(np.complex128)


def fft(x, axis=-1):
    """Unnormalised forward DFT along one axis."""
    x = np.moveaxis(_promote(x), axis, -1)
    return np.moveaxis(_fft_last(np.ascontiguousarray(x)), -1, axis)


def ifft(x, axis=-1):
    """Inverse DFT along one axis, scaled by 1/n."""
    x = np.moveaxis(_promote(x), axis, -1)
    return np.moveaxis(_ifft_last(np.ascontiguousarray(x)), -1, axis)


def fftn(x, axes):
    for ax in axes:
        x = fft(x, ax)
    return x


def ifftn(x, axes):
    for ax in axes:
        x = ifft(x, ax)
    return x


def dft_direct(x, axis=-1):
    """O(n^2) reference DFT used as an independent check."""
    x = np.moveaxis(_promote(x), axis, -1)
    n = x.shape[-1]
    out = np.zeros_like(x, dtype=np.complex128)
    for k in range(n):
        out[..., k] = np.sum(x * np.exp(-2j * np.pi * k * np.arange(n) / n), axis=-1)
    return np.moveaxis(out, -1, axis)
