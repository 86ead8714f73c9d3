import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from badge.metrics import GraphTrajectory, extract_graphs, structure_metrics
from badge.model import initial_model


def graph(edges, p=4, n=1):
    a = np.zeros((n, p, p), bool)
    for t, j, k in edges:
        a[t, j, k] = a[t, k, j] = True
    return GraphTrajectory(a)


def test_perfect_recovery():
    g = graph([(0, 0, 1), (0, 2, 3)])
    r = structure_metrics(g, g)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)


def test_half_recall():
    r = structure_metrics(graph([(0, 0, 1)]), graph([(0, 0, 1), (0, 2, 3)]))
    assert (r.precision, r.recall) == (1.0, 0.5)
    assert r.f1 == pytest.approx(2 / 3)


def test_empty_conventions():
    empty = graph([])
    assert structure_metrics(empty, empty).f1 == 1.0
    r = structure_metrics(empty, graph([(0, 1, 2)]))
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    r = structure_metrics(graph([(0, 1, 2)]), empty)
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_static_truth_broadcast():
    est = graph([(0, 0, 1), (1, 0, 1), (1, 1, 2)], n=2)
    r = structure_metrics(est, graph([(0, 0, 1)]))
    assert r.precision == pytest.approx(2 / 3)
    assert r.recall == 1.0
    assert r.per_time_edge_counts == [1, 2]


def test_macro_average():
    est = graph([(0, 0, 1), (1, 2, 3)], n=2)
    truth = graph([(0, 0, 1), (1, 0, 1)], n=2)
    r = structure_metrics(est, truth, "macro")
    assert r.f1 == pytest.approx(0.5)
    with pytest.raises(ValueError):
        structure_metrics(est, truth, "weighted")


def test_invalid_adjacency():
    a = np.zeros((1, 3, 3), bool)
    a[0, 0, 1] = True
    with pytest.raises(ValueError, match="symmetric"):
        GraphTrajectory(a)
    with pytest.raises(ValueError, match="self-loops"):
        GraphTrajectory(np.eye(3, dtype=bool))
    with pytest.raises(ValueError):
        structure_metrics(graph([], n=2), graph([], n=3))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(2, 6), n=st.integers(1, 4))
def test_matches_brute_force_confusion(seed, p, n):
    rng = np.random.default_rng(seed)

    def rand():
        u = np.triu(rng.uniform(size=(n, p, p)) < 0.4, 1)
        return u | np.swapaxes(u, 1, 2)

    e, t = rand(), rand()
    tp = fp = fn = 0
    for s in range(n):
        for j in range(p):
            for k in range(j + 1, p):
                tp += e[s, j, k] and t[s, j, k]
                fp += e[s, j, k] and not t[s, j, k]
                fn += t[s, j, k] and not e[s, j, k]
    r = structure_metrics(GraphTrajectory(e), GraphTrajectory(t))
    if tp + fp:
        assert r.precision == pytest.approx(tp / (tp + fp))
    if tp + fn:
        assert r.recall == pytest.approx(tp / (tp + fn))
    assert 0.0 <= r.f1 <= 1.0


def test_extract_graphs_strict_threshold():
    m = initial_model(np.random.default_rng(0).normal(size=(3, 3)), np.ones((3, 3), bool))
    m.s_marg[:] = [[0.5, 0.6, 0.4], [0.9, 0.1, 0.5], [0.0, 0.51, 1.0]]
    g = extract_graphs(m, 0.5)
    np.testing.assert_array_equal(g.edge_counts, [1, 2, 1])
    assert g.adjacency[1, 0, 1] and g.adjacency[1, 1, 0]
    assert not g.adjacency[0, 0, 1]
