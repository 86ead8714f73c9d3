"""Frequency-domain mode.

A stationary series is mapped to its normalized DFT on the interior
frequency grid; the coefficients are treated as independent circular
complex Gaussians whose precision is the inverse spectral density, and the
ordinary fit runs over the frequency axis with complex slabs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ObservationSet, var1_inverse_spectrum, var1_support  # noqa: F401
from .engine import FitConfig, FitResult, fit


def dft_frequencies(n):
    """Interior angular frequencies ``2 pi m / n``, ``m = 1..floor((n-1)/2)``."""
    m = np.arange(1, (n - 1) // 2 + 1)
    return 2.0 * np.pi * m / n


@dataclass
class SpectralCoefficients:
    freqs: np.ndarray
    coeffs: np.ndarray
    n_samples: int
    sample_rate: Optional[float] = None

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.freqs.shape[0]:
            raise ValueError("coeffs must be (N_f, P) matching freqs")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")

    def hz(self):
        """Physical frequency of every grid point (cycles per sample if no rate)."""
        rate = 1.0 if self.sample_rate is None else self.sample_rate
        return self.freqs * rate / (2.0 * np.pi)

    def as_observations(self):
        return ObservationSet(self.coeffs, axis="frequency", sample_rate=self.sample_rate)


@dataclass
class FrequencyBand:
    lo: float
    hi: float
    sample_rate: float = 1.0

    def __post_init__(self):
        if not 0 < self.lo < self.hi <= self.sample_rate / 2:
            raise ValueError("band must satisfy 0 < lo < hi <= sample_rate / 2")

    @classmethod
    def parse(cls, text, sample_rate=1.0):
        try:
            lo, hi = (float(v) for v in text.split(":"))
        except ValueError:
            raise ValueError(f"band {text!r} is not of the form lo:hi") from None
        return cls(lo, hi, sample_rate)


def normalized_dft(series, sample_rate=None) -> SpectralCoefficients:
    """``N^{-1/2} sum_t y_t exp(-i w t)`` on the interior grid.

    Time is indexed from 1, which only rotates the phase of each bin.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    if n < 5:
        raise ValueError("at least five samples are required")
    f = np.fft.fft(y, axis=0) / np.sqrt(n)
    m = np.arange(1, (n - 1) // 2 + 1)
    # fft uses t = 0..N-1; shift to t = 1..N
    phase = np.exp(-2j * np.pi * m / n)[:, None]
    return SpectralCoefficients(dft_frequencies(n), f[m] * phase, n, sample_rate)


def fit_spectral(coeffs: SpectralCoefficients, config: Optional[FitConfig] = None,
                 anneal=None, standardize=True) -> FitResult:
    """Fit the frequency-varying model to DFT coefficients.

    With ``standardize`` each variable is scaled to unit mean power over
    the grid before fitting.
    """
    obs = coeffs.as_observations()
    if standardize:
        from .data import standardize as _std
        obs, _ = _std(obs, center=False)
    return fit(obs, config, anneal)


def band_mask(freqs, band: FrequencyBand, n_samples):
    """Grid points whose physical frequency ``m * rate / N`` lies in the band."""
    m = np.rint(np.asarray(freqs) * n_samples / (2.0 * np.pi))
    hz = m * band.sample_rate / n_samples
    return (hz >= band.lo) & (hz <= band.hi)


def band_graph(result, band: FrequencyBand, threshold=0.5, freqs=None, n_samples=None):
    """Adjacency of edges active at some grid frequency inside ``band``.

    ``result`` is a :class:`FitResult` or a model; ``freqs`` and
    ``n_samples`` describe its grid (``n_samples`` defaults to the length
    implied by an interior grid of the model's size).
    """
    model = getattr(result, "model", result)
    if n_samples is None:
        n_samples = 2 * model.N + 1
    if freqs is None:
        freqs = dft_frequencies(n_samples)
    sel = band_mask(freqs, band, n_samples)
    if not sel.any():
        raise ValueError(f"band {band.lo}:{band.hi} contains no grid frequency")
    on = model.s_marg[:, sel].max(axis=1) > threshold
    p = model.P
    adj = np.zeros((p, p), dtype=bool)
    jj, kk = model.pairs.T
    adj[jj, kk] = on
    adj[kk, jj] = on
    return adj
