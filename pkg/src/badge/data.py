"""Observations, synthetic generators and CSV ingestion."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class ParseError(ValueError):
    pass


@dataclass
class ObservationSet:
    """An N x P data matrix with a missingness mask (True = observed).

    ``values`` may be complex for frequency-domain data. Masked entries of
    ``values`` are ignored.
    """
    values: np.ndarray
    mask: Optional[np.ndarray] = None
    axis: str = "time"
    sample_rate: Optional[float] = None
    names: Optional[list] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("values must be a 2-D (N, P) array")
        if not np.iscomplexobj(v):
            v = v.astype(float)
        if self.mask is None:
            self.mask = np.isfinite(v)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != v.shape:
            raise ValueError("mask shape does not match values")
        self.values = np.where(self.mask, v, 0)
        if self.axis not in ("time", "frequency"):
            raise ValueError("axis must be 'time' or 'frequency'")
        if self.names is None:
            self.names = [f"x{j + 1}" for j in range(v.shape[1])]
        if len(self.names) != v.shape[1]:
            raise ValueError("one name per column required")
        missing_cols = np.flatnonzero(self.mask.sum(axis=0) == 0)
        if missing_cols.size:
            raise ValueError(f"variable {self.names[missing_cols[0]]!r} has no observed values")

    @property
    def N(self):
        return self.values.shape[0]

    @property
    def P(self):
        return self.values.shape[1]

    @property
    def has_missing(self):
        return not bool(self.mask.all())

    def with_values(self, values, mask=None):
        return ObservationSet(values, self.mask if mask is None else mask, self.axis,
                              self.sample_rate, list(self.names))


@dataclass
class GroundTruth:
    """Generating parameters of a synthetic data set.

    For time-varying data ``precision`` is the (N, P, P) trajectory and
    ``support`` its off-diagonal nonzero pattern. For VAR(1) data ``A`` is
    set and ``support`` has a single slice (the time-series graph).
    """
    support: np.ndarray
    precision: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        doc = {"support": self.support.astype(int).tolist(), "meta": self.meta}
        if self.precision is not None:
            doc["precision"] = self.precision.tolist()
        if self.A is not None:
            doc["A"] = self.A.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(
            support=np.asarray(doc["support"], dtype=bool),
            precision=None if doc.get("precision") is None else np.asarray(doc["precision"]),
            A=None if doc.get("A") is None else np.asarray(doc["A"]),
            meta=doc.get("meta", {}),
        )


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _signed_uniform(rng, lo, hi, size):
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(lo, hi, size=size)


def simulate_time_varying(P, N, N_e, seed=None):
    """Sinusoidal time-varying precision trajectory and Gaussian samples.

    Off-diagonal entries follow ``A sin(pi t / 2N) + B cos(pi t / 2N) +
    C sin(pi (t / N + D))``; a single magnitude threshold zeroes entries so
    that on average ``N_e`` pairs are active per time point. Diagonals are
    row sums of absolute off-diagonals plus 0.1.
    """
    if P < 2 or N < 2:
        raise ValueError("need P >= 2 and N >= 2")
    n_pairs = P * (P - 1) // 2
    if not 0 < N_e <= n_pairs:
        raise ValueError(f"N_e must lie in (0, {n_pairs}]")
    rng = np.random.default_rng(seed)
    A = _signed_uniform(rng, 0.5, 1.0, n_pairs)
    B = _signed_uniform(rng, 0.5, 1.0, n_pairs)
    C = _signed_uniform(rng, 0.5, 1.0, n_pairs)
    D = rng.uniform(-0.25, 0.25, n_pairs)
    t = np.arange(1, N + 1)[None, :]
    off = (A[:, None] * np.sin(np.pi * t / (2 * N)) + B[:, None] * np.cos(np.pi * t / (2 * N))
           + C[:, None] * np.sin(np.pi * (t / N + D[:, None])))

    n_active = int(round(N_e * N))
    if n_active >= off.size:
        thr = 0.0
    else:
        mags = np.sort(np.abs(off), axis=None)[::-1]
        thr = 0.5 * (mags[n_active - 1] + mags[n_active])
    off = np.where(np.abs(off) >= thr, off, 0.0)

    jj, kk = np.triu_indices(P, 1)
    K = np.zeros((N, P, P))
    K[:, jj, kk] = off.T
    K[:, kk, jj] = off.T
    idx = np.arange(P)
    K[:, idx, idx] = np.abs(K).sum(axis=2) + 0.1

    # x = L^{-T} z has covariance K^{-1}
    L = np.linalg.cholesky(K)
    z = rng.standard_normal((N, P, 1))
    x = np.linalg.solve(np.swapaxes(L, 1, 2), z)[..., 0]

    support = K != 0
    support[:, idx, idx] = False
    truth = GroundTruth(support=support, precision=K,
                        meta={"kind": "time_varying", "P": P, "N": N, "N_e": N_e,
                              "seed": seed, "threshold": float(thr)})
    return ObservationSet(x), truth


def var1_inverse_spectrum(A, omega):
    """``I + A'A + exp(-i w) A + exp(i w) A'`` for a VAR(1) coefficient matrix."""
    A = np.asarray(A, dtype=float)
    p = A.shape[0]
    return (np.eye(p) + A.T @ A + np.exp(-1j * omega) * A + np.exp(1j * omega) * A.T)


def var1_support(A, freqs, tol=1e-12):
    """Off-diagonal pairs whose inverse spectrum is nonzero somewhere on the grid."""
    p = A.shape[0]
    sup = np.zeros((p, p), dtype=bool)
    for w in freqs:
        sup |= np.abs(var1_inverse_spectrum(A, w)) > tol
    sup[np.arange(p), np.arange(p)] = False
    return sup


def simulate_var1(P, N, N_e, seed=None):
    """Stationary VAR(1) series ``y_t = A y_{t-1} + e_t`` with ``N_e`` nonzero
    off-diagonal coefficients."""
    if P < 2 or N < 2:
        raise ValueError("need P >= 2 and N >= 2")
    if not 0 <= N_e <= P * (P - 1):
        raise ValueError(f"N_e must lie in [0, {P * (P - 1)}]")
    rng = np.random.default_rng(seed)
    off = np.flatnonzero(~np.eye(P, dtype=bool))
    pos = rng.choice(off, size=N_e, replace=False)
    A = np.zeros(P * P)
    A[pos] = _signed_uniform(rng, 0.2, 0.5, N_e)
    A = A.reshape(P, P)
    if N_e:
        radius = np.max(np.abs(np.linalg.eigvals(A)))
        A = A * (0.95 / max(1.0, radius))

    burn = 10 * P
    eps = rng.standard_normal((N + burn, P))
    y = np.zeros((N + burn, P))
    prev = np.zeros(P)
    for t in range(N + burn):
        prev = A @ prev + eps[t]
        y[t] = prev
    y = y[burn:]

    from .spectral import dft_frequencies
    sup = var1_support(A, dft_frequencies(N))
    truth = GroundTruth(support=sup[None], A=A,
                        meta={"kind": "var1", "P": P, "N": N, "N_e": N_e, "seed": seed})
    return ObservationSet(y), truth


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _parse_cell(cell, row, col):
    cell = cell.strip()
    if cell == "":
        return math.nan, False
    try:
        return float(cell), True
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None


def load_observations(path, format=None):
    """Read a CSV (header = names, one row per time point, empty = missing)
    or a JSON observation document."""
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        with open(path) as fh:
            doc = json.load(fh)
        if "values" not in doc:
            raise ParseError("JSON document has no 'values' field")
        vals = np.asarray(doc["values"], dtype=float)
        mask = np.asarray(doc.get("mask", np.isfinite(vals)), dtype=bool)
        return ObservationSet(np.nan_to_num(vals), mask, doc.get("axis", "time"),
                              doc.get("sample_rate"), doc.get("names"))
    if fmt != "csv":
        raise ParseError(f"unknown format {fmt!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError("empty file")
    names = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise ParseError("no data rows")
    vals = np.empty((len(body), len(names)))
    mask = np.empty(vals.shape, dtype=bool)
    for i, r in enumerate(body):
        if len(r) != len(names):
            raise ParseError(f"row {i + 2} has {len(r)} cells, expected {len(names)}")
        for c, cell in enumerate(r):
            vals[i, c], mask[i, c] = _parse_cell(cell, i + 2, c + 1)
    return ObservationSet(np.nan_to_num(vals), mask, names=names)


def save_observations(obs: ObservationSet, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(obs.names)
        for row, m in zip(obs.values, obs.mask):
            w.writerow([repr(float(v)) if ok else "" for v, ok in zip(row, m)])


def standardize(obs: ObservationSet, center=None):
    """Scale each column to unit observed standard deviation.

    Means are subtracted for time-domain data and left alone otherwise
    unless ``center`` says so. Returns the new set and a record with the
    per-column ``scale`` and ``shift``.
    """
    if center is None:
        center = obs.axis == "time"
    v = obs.values
    m = obs.mask
    cnt = m.sum(axis=0)
    for j in np.flatnonzero(cnt < 2):
        raise ValueError(f"column {obs.names[j]!r} has fewer than two observed values")
    mean = np.where(m, v, 0).sum(axis=0) / cnt
    dev = np.where(m, v - mean, 0)
    sd = np.sqrt((np.abs(dev) ** 2).sum(axis=0) / cnt)
    for j in range(obs.P):
        if not sd[j] > 1e-12 * max(1.0, abs(mean[j])):
            raise ValueError(f"column {obs.names[j]!r} has zero variance")
    shift = mean if center else np.zeros_like(mean)
    out = obs.with_values(np.where(m, (v - shift) / sd, 0))
    return out, {"scale": sd.tolist(), "shift": np.real(shift).tolist()}
