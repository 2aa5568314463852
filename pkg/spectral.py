"""
Radix-2 FFT used by the spectral probe and the linear-theory suite.
"""

import numpy as np


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=int)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """
    Iterative Cooley-Tukey transform along one axis (length must be a power
    of two). Forward uses exp(-2πi·kn/N) with no scaling; inverse divides by N.
    """
    data = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = data.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")

    lead = data.shape[:-1]
    a = data[..., _bit_reverse_indices(n)]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2

    if inverse:
        a = a / n
    return np.moveaxis(a, -1, axis)


def ifft_radix2(x, axis: int = -1) -> np.ndarray:
    return fft_radix2(x, axis=axis, inverse=True)
