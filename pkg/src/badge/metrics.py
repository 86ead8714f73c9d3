"""Graph read-out and structure-recovery scores."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class GraphTrajectory:
    """Boolean (N, P, P) adjacency, symmetric with an empty diagonal."""
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.ndim == 2:
            a = a[None]
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise ValueError("adjacency must be (N, P, P)")
        if np.any(a != np.swapaxes(a, 1, 2)):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diagonal(a, axis1=1, axis2=2)):
            raise ValueError("adjacency must have no self-loops")
        self.adjacency = a

    @property
    def edge_counts(self):
        return np.triu(self.adjacency, 1).sum(axis=(1, 2))

    def upper(self):
        """(N, E) view of the ``j < k`` slots."""
        p = self.adjacency.shape[1]
        jj, kk = np.triu_indices(p, 1)
        return self.adjacency[:, jj, kk]


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    per_time_edge_counts: list = field(default_factory=list)
    wall_time_seconds: float = float("nan")

    def to_dict(self):
        return asdict(self)


def extract_graphs(model, threshold=0.5) -> GraphTrajectory:
    """Edges with ``<s> > threshold`` at every covariate point."""
    on = model.s_marg > threshold
    p = model.P
    adj = np.zeros((model.N, p, p), dtype=bool)
    jj, kk = model.pairs.T
    adj[:, jj, kk] = on.T
    adj[:, kk, jj] = on.T
    return GraphTrajectory(adj)


def _scores(tp, n_est, n_true):
    if n_est == 0:
        precision = 1.0 if n_true == 0 else 0.0
    else:
        precision = tp / n_est
    if n_true == 0:
        recall = 1.0 if n_est == 0 else 0.0
    else:
        recall = tp / n_true
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def structure_metrics(est: GraphTrajectory, truth: GraphTrajectory, average="micro",
                      wall_time_seconds=float("nan")) -> MetricsReport:
    """Precision, recall and F1 over all ``(t, j < k)`` slots.

    A single-slice truth is broadcast over time (static graphs).
    ``average='macro'`` scores each time point and averages.
    """
    e, t = est.upper(), truth.upper()
    if t.shape[0] == 1 and e.shape[0] > 1:
        t = np.broadcast_to(t, e.shape)
    if e.shape[0] == 1 and t.shape[0] > 1:
        e = np.broadcast_to(e, t.shape)
    if e.shape != t.shape:
        raise ValueError(f"graph shapes differ: {est.adjacency.shape} vs {truth.adjacency.shape}")
    if average == "micro":
        p, r, f = _scores(int(np.sum(e & t)), int(e.sum()), int(t.sum()))
    elif average == "macro":
        rows = [_scores(int(np.sum(a & b)), int(a.sum()), int(b.sum())) for a, b in zip(e, t)]
        p, r, f = (float(v) for v in np.mean(rows, axis=0))
    else:
        raise ValueError("average must be 'micro' or 'macro'")
    return MetricsReport(float(p), float(r), float(f), est.edge_counts.tolist(),
                         wall_time_seconds)
