"""
Unit tests for the radix-2 FFT.
"""

import numpy as np
import pytest

from spectral import fft_radix2, ifft_radix2


class TestFFT:
    """Agreement with a direct DFT."""

    @staticmethod
    def direct_dft(x):
        n = len(x)
        k = np.arange(n)
        return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x

    @pytest.mark.parametrize("n", [1, 2, 8, 64])
    def test_matches_direct_dft(self, rng, n):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        np.testing.assert_allclose(fft_radix2(x), self.direct_dft(x), atol=1e-9)

    def test_pure_tone(self):
        """cos at bin 3 of 16 puts n/2 in bins 3 and 13 and nothing elsewhere."""
        n = 16
        spectrum = fft_radix2(np.cos(2 * np.pi * 3 * np.arange(n) / n))
        expected = np.zeros(n)
        expected[[3, 13]] = n / 2
        np.testing.assert_allclose(spectrum, expected, atol=1e-9)

    def test_axis_argument(self, rng):
        x = rng.standard_normal((8, 3))
        by_column = fft_radix2(x, axis=0)
        for column in range(3):
            np.testing.assert_allclose(by_column[:, column], self.direct_dft(x[:, column]), atol=1e-9)

    def test_inverse(self, rng):
        x = rng.standard_normal(32)
        np.testing.assert_allclose(ifft_radix2(fft_radix2(x)).real, x, atol=1e-12)

    @pytest.mark.parametrize("n", [3, 12])
    def test_rejects_other_lengths(self, n):
        with pytest.raises(ValueError, match="power of two"):
            fft_radix2(np.zeros(n))
