"""Iterative radix-2 FFT, vectorized over leading axes.

Sizes are restricted to powers of two; the synthetic corpus and the
spectrum analysis both guarantee that. Sign convention matches the usual
engineering one: forward kernel e^{-2 pi i k n / N}, inverse scaled by 1/N.
"""

from __future__ import annotations

import numpy as np

_REV_CACHE: dict[int, np.ndarray] = {}


def _bit_reversal(n: int) -> np.ndarray:
    perm = _REV_CACHE.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        perm = np.zeros(n, dtype=np.intp)
        for i in range(n):
            r = 0
            x = i
            for _ in range(bits):
                r = (r << 1) | (x & 1)
                x >>= 1
            perm[i] = r
        _REV_CACHE[n] = perm
    return perm


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")


def fft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Transform along the last axis."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    _check_pow2(n)
    if n == 1:
        return a.copy()
    a = a[..., _bit_reversal(n)]
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        view = a.reshape(a.shape[:-1] + (n // m, m))
        even = view[..., :half]
        odd = view[..., half:] * twiddle
        upper = even + odd
        lower = even - odd
        view[..., :half] = upper
        view[..., half:] = lower
        m *= 2
    if inverse:
        a /= n
    return a


def ifft(x: np.ndarray) -> np.ndarray:
    return fft(x, inverse=True)


def fft2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """2-D transform over the last two axes (rows, then columns)."""
    a = fft(np.asarray(x, dtype=np.complex128), inverse=inverse)
    a = fft(np.swapaxes(a, -1, -2), inverse=inverse)
    return np.swapaxes(a, -1, -2)


def ifft2(x: np.ndarray) -> np.ndarray:
    return fft2(x, inverse=True)


def center_dc(spectrum: np.ndarray) -> np.ndarray:
    """Quadrant shift so the DC bin sits at the grid center."""
    return np.fft.fftshift(spectrum, axes=(-2, -1))
