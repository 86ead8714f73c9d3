import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import digamma

from badge.model import (EdgeState, HyperState, NumericalOverflowWarning, VariationalModel,
                         edge_index, edge_k_moments, edge_pairs, hyper_expectations,
                         initial_model, lognormal_moments)


def edge(s, jm, jv):
    n = len(s)
    return EdgeState(np.asarray(s, float), np.full((n - 1, 2, 2), 0.25),
                     np.asarray(jm, float)[None], np.asarray(jv, float)[None],
                     np.zeros((1, n - 1)), 1.0, 1.0)


@pytest.mark.parametrize("s, jm, jv, want", [
    (0.0, 1.3, 0.7, (0.0, 0.0)),
    (1.0, 2.0, 1.0, (2.0, 5.0)),
    (0.5, -1.0, 0.25, (-0.5, 0.625)),
])
def test_edge_k_moments_examples(s, jm, jv, want):
    km, k2 = edge_k_moments(edge([s, s], [jm, jm], [jv, jv]), 1)
    assert km == pytest.approx(want[0])
    assert k2 == pytest.approx(want[1])


def test_complex_edge_moments():
    e = EdgeState(np.array([0.5]), np.zeros((0, 2, 2)), np.array([[1.0], [2.0]]),
                  np.array([[0.5], [0.25]]), np.zeros((2, 0)), 1.0, 1.0)
    km, k2 = edge_k_moments(e, 0)
    assert km == pytest.approx(0.5 + 1.0j)
    assert k2 == pytest.approx(0.5 * (1 + 4 + 0.75))


@settings(max_examples=100, deadline=None)
@given(s=st.floats(0, 1), m=st.floats(-50, 50), v=st.floats(1e-8, 50))
def test_second_moment_dominates(s, m, v):
    km, k2 = edge_k_moments(edge([s, s], [m, m], [v, v]), 0)
    assert k2 >= km ** 2 - 1e-12 * max(1.0, k2)


@pytest.mark.parametrize("mean, var, want", [
    (0.0, 1e-300, (1.0, 1.0)),
    (1.0, 2.0, (np.e ** 2, 1.0)),
    (-0.5, 1.0, (1.0, np.e)),
])
def test_lognormal_examples(mean, var, want):
    assert lognormal_moments(mean, var) == pytest.approx(want, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(m=st.floats(-20, 20), v=st.floats(1e-6, 20))
def test_lognormal_product_identity(m, v):
    ep, en = lognormal_moments(m, v)
    assert ep * en == pytest.approx(np.exp(v), rel=1e-12)
    assert ep * en >= 1.0


def test_lognormal_saturates_with_warning():
    with pytest.warns(NumericalOverflowWarning):
        ep, en = lognormal_moments(800.0, 1.0)
    assert np.isfinite(ep) and np.isfinite(en)


def test_hyper_expectations_examples():
    h = hyper_expectations(HyperState(1.0, 1.0, 3.0, 3.0, 1.0, 1.0, 2.0, 4.0))
    assert h.e_log_pi1 == pytest.approx(-1.0, abs=1e-14)
    assert h.e_log_a00 == pytest.approx(h.e_log_1m_a00, abs=1e-14)
    assert h.e_beta == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-3, 1e4), min_size=8, max_size=8))
def test_hyper_cache_matches_digamma(vals):
    h = HyperState(*vals)
    pairs = [(h.a, h.b, h.e_log_pi1, h.e_log_1m_pi1), (h.c0, h.d0, h.e_log_a00, h.e_log_1m_a00),
             (h.c1, h.d1, h.e_log_a11, h.e_log_1m_a11)]
    for a, b, la, lb in pairs:
        assert la == pytest.approx(digamma(a) - digamma(a + b), abs=1e-12)
        assert lb == pytest.approx(digamma(b) - digamma(a + b), abs=1e-12)
    assert h.e_log_beta == pytest.approx(digamma(h.beta_shape) - np.log(h.beta_rate), abs=1e-12)
    h.a *= 2.0
    h.refresh()
    assert h.e_log_pi1 == pytest.approx(digamma(h.a) - digamma(h.a + h.b), abs=1e-12)


def test_hyper_rejects_nonpositive():
    with pytest.raises(ValueError):
        HyperState(a=0.0)


def test_edge_indexing():
    p = 6
    pairs = edge_pairs(p)
    assert len(pairs) == p * (p - 1) // 2
    for e, (j, k) in enumerate(pairs):
        assert edge_index(p, j, k) == e
        assert edge_index(p, k, j) == e
    with pytest.raises(ValueError):
        edge_index(p, 2, 2)


def test_initial_model():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 4)) * np.array([1.0, 2.0, 0.5, 3.0])
    m = initial_model(x, np.ones_like(x, bool))
    assert m.n_edges == 6
    np.testing.assert_allclose(m.s_marg, 0.5)
    np.testing.assert_allclose(m.j_mean, 0.0)
    np.testing.assert_allclose(m.j_var, 1.0)
    np.testing.assert_allclose(m.k_mean[:, 0], -np.log(x.var(axis=0)))
    np.testing.assert_allclose(m.k_var, 0.1)
    np.testing.assert_allclose(m.alpha_mean, 1.0)
    assert m.hypers.e_beta == pytest.approx(1.0)
    ep, en = lognormal_moments(m.k_mean, m.k_var)
    np.testing.assert_allclose(m.exp_pos, ep, rtol=1e-12)
    np.testing.assert_allclose(m.exp_neg, en, rtol=1e-12)


def test_initial_model_complex_slab_variance():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(10, 3)) + 1j * rng.normal(size=(10, 3))
    m = initial_model(f, np.ones(f.shape, bool), "frequency")
    assert m.n_comp == 2
    np.testing.assert_allclose(m.j_var.sum(axis=1), 1.0)


def test_single_point_rejected():
    with pytest.raises(ValueError):
        initial_model(np.ones((1, 3)), np.ones((1, 3), bool))


def test_symmetric_precision_and_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 4))
    m = initial_model(x, np.ones_like(x, bool))
    m.j_mean[:] = rng.normal(size=m.j_mean.shape)
    m.s_marg[:] = rng.uniform(size=m.s_marg.shape)
    pm = m.precision_mean()
    np.testing.assert_allclose(pm, np.swapaxes(pm, 1, 2))
    path = tmp_path / "m.json"
    m.save(path)
    m2 = VariationalModel.load(path)
    for name in m.__dataclass_fields__:
        a, b = getattr(m, name), getattr(m2, name)
        if isinstance(a, np.ndarray):
            np.testing.assert_array_equal(a, b)
    assert m2.hypers.shapes() == m.hypers.shapes()
    e = m.edge(3, 1)
    np.testing.assert_array_equal(e.s_marginal, m.s_marg[edge_index(4, 1, 3)])


def test_rejects_foreign_document():
    with pytest.raises(ValueError):
        VariationalModel.from_dict({"format": "other"})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(ValueError):
            VariationalModel.from_dict({"format": "badge-model", "version": 99})
