import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from badge.data import ObservationSet, standardize
from badge.engine import FitConfig, fit
from badge.model import initial_model
from badge.spectral import (FrequencyBand, SpectralCoefficients, band_graph, band_mask,
                            dft_frequencies, fit_spectral, normalized_dft,
                            var1_inverse_spectrum)


# -- DFT ---------------------------------------------------------------------------

def test_grid_excludes_dc_and_nyquist():
    assert len(dft_frequencies(8)) == 3
    assert len(dft_frequencies(9)) == 4
    assert np.all((dft_frequencies(100) > 0) & (dft_frequencies(100) < np.pi))


def test_constant_series():
    c = normalized_dft(np.full((16, 2), 3.0))
    np.testing.assert_allclose(c.coeffs, 0.0, atol=1e-12)


def test_cosine_bin():
    n, m = 64, 5
    t = np.arange(1, n + 1)
    c = normalized_dft(np.cos(2 * np.pi * m * t / n))
    power = np.abs(c.coeffs[:, 0]) ** 2
    assert power[m - 1] == pytest.approx(n / 4)
    np.testing.assert_allclose(np.delete(power, m - 1), 0.0, atol=1e-20)


def test_matches_direct_sum():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(11, 2))
    c = normalized_dft(y)
    t = np.arange(1, 12)
    direct = np.array([[np.sum(y[:, j] * np.exp(-1j * w * t)) for j in range(2)]
                       for w in c.freqs]) / np.sqrt(11)
    np.testing.assert_allclose(c.coeffs, direct, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(5, 200), seed=st.integers(0, 2**32 - 1))
def test_parseval(n, seed):
    y = np.random.default_rng(seed).normal(size=n)
    c = normalized_dft(y).coeffs[:, 0]
    dc = y.sum() / np.sqrt(n)
    nyq = np.sum(y * (-1.0) ** np.arange(1, n + 1)) / np.sqrt(n) if n % 2 == 0 else 0.0
    total = dc ** 2 + 2 * np.sum(np.abs(c) ** 2) + nyq ** 2
    assert total == pytest.approx(np.sum(y ** 2), abs=1e-9 * max(1.0, np.sum(y ** 2)))


def test_short_series_rejected():
    with pytest.raises(ValueError):
        normalized_dft(np.ones((4, 2)))


def test_hz_and_band_validation():
    c = normalized_dft(np.random.default_rng(0).normal(size=(10, 2)), sample_rate=100.0)
    np.testing.assert_allclose(c.hz(), [10, 20, 30, 40])
    with pytest.raises(ValueError):
        FrequencyBand(10.0, 5.0, 100.0)
    with pytest.raises(ValueError):
        FrequencyBand(1.0, 60.0, 100.0)
    assert FrequencyBand.parse("8:12", 100.0).hi == 12.0
    with pytest.raises(ValueError):
        FrequencyBand.parse("8-12", 100.0)
    with pytest.raises(ValueError):
        SpectralCoefficients(np.ones(3), np.ones((2, 2)), 8)


# -- VAR(1) inverse spectrum ----------------------------------------------------------

def test_inverse_spectrum_identity():
    for w in (0.1, 1.0, 3.0):
        np.testing.assert_allclose(var1_inverse_spectrum(np.zeros((3, 3)), w), np.eye(3))


def test_inverse_spectrum_at_zero():
    A = np.random.default_rng(0).normal(size=(4, 4)) * 0.3
    np.testing.assert_allclose(var1_inverse_spectrum(A, 0.0),
                               (np.eye(4) + A.T) @ (np.eye(4) + A), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), w=st.floats(0, 2 * np.pi))
def test_inverse_spectrum_hermitian_psd(seed, w):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(5, 5))
    A *= 0.95 / max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
    K = var1_inverse_spectrum(A, w)
    np.testing.assert_allclose(K, K.conj().T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() >= -1e-10


# -- band graphs ----------------------------------------------------------------------

def band_model(s):
    """Frequency model over a 10-sample grid with prescribed spike marginals."""
    f = np.ones((4, 3), complex)
    m = initial_model(f + np.arange(12).reshape(4, 3), np.ones((4, 3), bool), "frequency")
    m.s_marg[:] = s
    return m


def test_band_graph_examples():
    band = FrequencyBand(0.05, 0.5)
    assert not band_graph(band_model(0.0), band, 0.5, n_samples=10).any()
    s = np.zeros((3, 4))
    s[1, 2] = 0.9
    adj = band_graph(band_model(s), band, 0.5, n_samples=10)
    assert adj[0, 2] and adj[2, 0] and adj.sum() == 2


def test_band_graph_brute_force():
    rng = np.random.default_rng(0)
    s = rng.uniform(size=(3, 4))
    m = band_model(s)
    freqs = dft_frequencies(10)
    for lo, hi in [(0.05, 0.25), (0.15, 0.35), (0.3, 0.5)]:
        adj = band_graph(m, FrequencyBand(lo, hi), 0.5, freqs, 10)
        for e, (j, k) in enumerate(m.pairs):
            inside = [t for t, w in enumerate(freqs) if lo <= w / (2 * np.pi) <= hi]
            assert adj[j, k] == any(s[e, t] > 0.5 for t in inside)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t1=st.floats(0, 1), t2=st.floats(0, 1))
def test_band_graph_monotone_in_threshold(seed, t1, t2):
    m = band_model(np.random.default_rng(seed).uniform(size=(3, 4)))
    band = FrequencyBand(0.05, 0.5)
    lo, hi = sorted((t1, t2))
    a, b = band_graph(m, band, lo, n_samples=10), band_graph(m, band, hi, n_samples=10)
    assert not np.any(b & ~a)


def test_empty_band_rejected():
    with pytest.raises(ValueError, match="no grid"):
        band_graph(band_model(0.5), FrequencyBand(0.01, 0.05), n_samples=10)


def test_band_mask_uses_bin_convention():
    freqs = dft_frequencies(100)
    sel = band_mask(freqs, FrequencyBand(8.0, 12.0, 100.0), 100)
    np.testing.assert_array_equal(np.flatnonzero(sel) + 1, [8, 9, 10, 11, 12])


# -- fits ------------------------------------------------------------------------------

def test_white_noise_null_fit():
    y = np.random.default_rng(0).normal(size=(512, 5))
    c = normalized_dft(standardize(ObservationSet(y))[0].values)
    res = fit_spectral(c, FitConfig(max_iters=300, anneal_iters=0))
    assert (res.model.s_marg > 0.5).mean() < 0.05


def test_conjugate_symmetry():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(40, 3))
    y[1:, 1] += 0.6 * y[:-1, 0]
    c = normalized_dft(y)
    cfg = FitConfig(max_iters=50, anneal_iters=0)
    a = fit(ObservationSet(c.coeffs, axis="frequency"), cfg)
    b = fit(ObservationSet(np.conj(c.coeffs), axis="frequency"), cfg)
    np.testing.assert_allclose(a.model.s_marg, b.model.s_marg, atol=1e-8)
    np.testing.assert_allclose(a.model.j_mean[:, 1], -b.model.j_mean[:, 1], atol=1e-8)


def test_real_frequency_data_reduces_to_time_structure():
    # with zero imaginary parts the complex fit sees the time-domain data
    # with doubled weight; the real slab components carry the whole signal
    rng = np.random.default_rng(2)
    x = rng.normal(size=(12, 3))
    x[:, 1] += 0.8 * x[:, 0]
    res = fit(ObservationSet(x.astype(complex), axis="frequency"),
              FitConfig(max_iters=20, anneal_iters=0))
    np.testing.assert_allclose(res.model.j_mean[:, 1], 0.0, atol=1e-12)
