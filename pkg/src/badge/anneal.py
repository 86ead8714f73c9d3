"""Simulated annealing for the variational sweep.

Early sweeps ascend a blend of the true objective (weight ``R``) and a
noisy copy (weight ``1 - R``) built from block-bootstrapped data and
hyperparameters drawn from their current posteriors. A sweep is kept or
rolled back by a Metropolis test on the exact objective. ``R`` climbs from
0 to 1 in steps of ``10 / N_a`` every ten iterations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ObservationSet


def annealing_rate(it, n_anneal):
    """``min(1, 10 floor((it - 1) / 10) / n_anneal)``; 1 when annealing is off."""
    if it < 1:
        raise ValueError("iterations are counted from 1")
    if n_anneal <= 0:
        return 1.0
    return min(1.0, 10.0 * ((it - 1) // 10) / n_anneal)


def window_halfwidth(rate, n):
    # round half to even
    return int(np.round((1.0 - rate) * n / 2.0))


def bootstrap_indices(n, rate, rng):
    """Source index ``tau`` for every ``t``: uniform on ``[t - w, t + w]``
    clamped to ``[0, n - 1]``."""
    w = window_halfwidth(rate, n)
    t = np.arange(n)
    if w == 0:
        return t
    lo = np.maximum(t - w, 0)
    hi = np.minimum(t + w, n - 1)
    return lo + np.floor(rng.random(n) * (hi - lo + 1)).astype(np.int64)


def bootstrap_resample(data: ObservationSet, rate, rng) -> ObservationSet:
    idx = bootstrap_indices(data.N, rate, rng)
    return data.with_values(data.values[idx], data.mask[idx])


@dataclass
class HyperSample:
    pi1: float
    a00: float
    a11: float
    alpha: np.ndarray
    beta: float


_TINY = 1e-300


def perturb_hyperparameters(h, rng, alpha_shape=None, alpha_rate=None) -> HyperSample:
    """One draw of ``(pi1, A00, A11, alpha, beta)`` from their posteriors."""
    lo, hi = _TINY, 1.0 - np.finfo(float).epsneg
    pi1 = float(np.clip(rng.beta(h.a, h.b), lo, hi))
    a00 = float(np.clip(rng.beta(h.c0, h.d0), lo, hi))
    a11 = float(np.clip(rng.beta(h.c1, h.d1), lo, hi))
    if alpha_shape is None:
        alpha = np.empty(0)
    else:
        alpha = np.maximum(rng.gamma(alpha_shape, 1.0 / np.asarray(alpha_rate)), _TINY)
    beta = max(float(rng.gamma(h.beta_shape, 1.0 / h.beta_rate)), _TINY)
    return HyperSample(pi1, a00, a11, alpha, beta)


def metropolis_accept(elbo_new, elbo_old, rate, rng):
    """Accept with probability ``min(1, exp((new - old) / (1 - R)))``."""
    diff = elbo_new - elbo_old
    if diff >= 0:
        return True
    if rate >= 1.0:
        return False
    return bool(rng.random() < np.exp(diff / (1.0 - rate)))


class AnnealDriver:
    """Schedule, noise source and acceptance bookkeeping for one fit."""

    def __init__(self, n_anneal=500, seed=0):
        self.n_anneal = int(n_anneal)
        self.rng = np.random.default_rng(seed)
        self.current_rate = 0.0
        self.acceptance_count = 0
        self.proposal_count = 0

    def rate(self, it):
        self.current_rate = annealing_rate(it, self.n_anneal)
        return self.current_rate

    def indices(self, n, rate):
        return bootstrap_indices(n, rate, self.rng)

    def sample_hypers(self, model) -> HyperSample:
        return perturb_hyperparameters(model.hypers, self.rng, model.alpha_shape,
                                       model.alpha_rate)

    def accept(self, elbo_new, elbo_old, rate):
        ok = metropolis_accept(elbo_new, elbo_old, rate, self.rng)
        self.proposal_count += 1
        self.acceptance_count += int(ok)
        return ok

    @property
    def acceptance_rate(self):
        if self.proposal_count == 0:
            return float("nan")
        return self.acceptance_count / self.proposal_count
