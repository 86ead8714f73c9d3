"""Exact inference on length-N chains.

Two chain families are needed by the variational updates: binary Markov
chains (forward-backward) and tridiagonal Gauss-Markov chains (LDL'
belief propagation). Both run in O(N). The numba kernels are used
directly by the sweep in :mod:`badge.engine`; the dataclass wrappers
below are the public surface.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

LOG_2PI_E = np.log(2.0 * np.pi * np.e)

# pivot floor for the tridiagonal Cholesky
PIVOT_FLOOR = 1e-12


class InvalidInputError(ValueError):
    pass


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _lse2(a, b):
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def binary_forward_backward(node, edge, marg, pair):
    """Forward-backward on a binary chain, in log space.

    ``node[t, a]`` is the log node potential of state ``a`` at ``t`` and
    ``edge[t, a, b]`` the log potential of ``(s_t = a, s_{t+1} = b)``.
    Fills ``marg`` (N, 2) and ``pair`` (N-1, 2, 2) in place and returns
    the log partition function.
    """
    n = node.shape[0]
    la = np.empty((n, 2))
    lb = np.empty((n, 2))
    la[0, 0] = node[0, 0]
    la[0, 1] = node[0, 1]
    for t in range(n - 1):
        for b in range(2):
            la[t + 1, b] = node[t + 1, b] + _lse2(la[t, 0] + edge[t, 0, b],
                                                  la[t, 1] + edge[t, 1, b])
    lb[n - 1, 0] = 0.0
    lb[n - 1, 1] = 0.0
    for t in range(n - 2, -1, -1):
        for a in range(2):
            lb[t, a] = _lse2(edge[t, a, 0] + node[t + 1, 0] + lb[t + 1, 0],
                             edge[t, a, 1] + node[t + 1, 1] + lb[t + 1, 1])
    logz = _lse2(la[n - 1, 0], la[n - 1, 1])
    for t in range(n):
        p0 = np.exp(la[t, 0] + lb[t, 0] - logz)
        p1 = np.exp(la[t, 1] + lb[t, 1] - logz)
        s = p0 + p1
        marg[t, 0] = p0 / s
        marg[t, 1] = p1 / s
    for t in range(n - 1):
        s = 0.0
        for a in range(2):
            for b in range(2):
                v = np.exp(la[t, a] + edge[t, a, b] + node[t + 1, b]
                           + lb[t + 1, b] - logz)
                pair[t, a, b] = v
                s += v
        for a in range(2):
            for b in range(2):
                pair[t, a, b] /= s
    return logz


@njit(cache=True)
def tridiag_factor_solve(d, e, h, mean, var, lag):
    """Solve a symmetric tridiagonal Gaussian chain.

    ``d`` is the precision diagonal, ``e`` the off-diagonal
    (``Omega[t, t+1]``), ``h`` the potential vector. Writes the mean
    ``Omega^{-1} h``, the marginal variances and the lag-one covariances
    ``(Omega^{-1})[t, t+1]``. Returns ``(ok, logdet)``; ``ok`` is False if
    a pivot falls below the floor, in which case outputs are garbage.
    """
    n = d.shape[0]
    piv = np.empty(n)
    ell = np.empty(max(n - 1, 0))
    piv[0] = d[0]
    if not piv[0] > PIVOT_FLOOR * (1.0 + abs(d[0])):
        return False, 0.0
    for t in range(n - 1):
        ell[t] = e[t] / piv[t]
        piv[t + 1] = d[t + 1] - ell[t] * e[t]
        if not piv[t + 1] > PIVOT_FLOOR * (1.0 + abs(d[t + 1])):
            return False, 0.0
    logdet = 0.0
    for t in range(n):
        logdet += np.log(piv[t])
    # L y = h, then L' m = D^{-1} y
    y = h[0]
    mean[0] = y / piv[0]
    for t in range(n - 1):
        y = h[t + 1] - ell[t] * y
        mean[t + 1] = y / piv[t + 1]
    for t in range(n - 2, -1, -1):
        mean[t] = mean[t] - ell[t] * mean[t + 1]
    var[n - 1] = 1.0 / piv[n - 1]
    for t in range(n - 2, -1, -1):
        lag[t] = -ell[t] * var[t + 1]
        var[t] = 1.0 / piv[t] - ell[t] * lag[t]
    return True, logdet


@njit(cache=True)
def tridiag_solve_jitter(d, e, h, mean, var, lag):
    """Like :func:`tridiag_factor_solve`, adding diagonal jitter on failure.

    Jitter is ``1e-8 * (1 + |d_t|)``, grown tenfold per retry. Returns
    ``(ok, logdet, jittered)``.
    """
    ok, logdet = tridiag_factor_solve(d, e, h, mean, var, lag)
    if ok:
        return True, logdet, False
    scale = 1e-8
    dj = np.empty_like(d)
    for _ in range(12):
        for t in range(d.shape[0]):
            dj[t] = d[t] + scale * (1.0 + abs(d[t]))
        ok, logdet = tridiag_factor_solve(dj, e, h, mean, var, lag)
        if ok:
            for t in range(d.shape[0]):
                d[t] = dj[t]
            return True, logdet, True
        scale *= 10.0
    return False, 0.0, True


# ---------------------------------------------------------------------------
# public surface
# ---------------------------------------------------------------------------

@dataclass
class BinaryChainPotentials:
    """Log potentials of a binary chain.

    ``edge_logpot[t, a, b]`` couples ``s_t = a`` (earlier) with
    ``s_{t+1} = b`` (later).
    """
    node_logpot: np.ndarray
    edge_logpot: np.ndarray

    def __post_init__(self):
        self.node_logpot = np.asarray(self.node_logpot, dtype=float)
        n = self.node_logpot.shape[0]
        if self.edge_logpot is None or np.size(self.edge_logpot) == 0:
            self.edge_logpot = np.zeros((max(n - 1, 0), 2, 2))
        self.edge_logpot = np.asarray(self.edge_logpot, dtype=float)
        if n < 1 or self.node_logpot.shape != (n, 2):
            raise InvalidInputError("node_logpot must have shape (N, 2), N >= 1")
        if self.edge_logpot.shape != (n - 1, 2, 2):
            raise InvalidInputError("edge_logpot must have shape (N-1, 2, 2)")


@dataclass
class BinaryChainBeliefs:
    marginals: np.ndarray
    pairwise: np.ndarray
    log_partition: float


@dataclass
class GaussChainParams:
    omega_diag: np.ndarray
    omega_off: np.ndarray
    potential: np.ndarray

    def __post_init__(self):
        self.omega_diag = np.asarray(self.omega_diag, dtype=float)
        self.omega_off = np.asarray(self.omega_off, dtype=float).reshape(-1)
        self.potential = np.asarray(self.potential, dtype=float)
        n = self.omega_diag.shape[0]
        if self.omega_off.shape[0] != max(n - 1, 0) or self.potential.shape[0] != n:
            raise InvalidInputError("inconsistent chain lengths")

    def dense(self):
        n = self.omega_diag.shape[0]
        om = np.diag(self.omega_diag)
        idx = np.arange(n - 1)
        om[idx, idx + 1] = self.omega_off
        om[idx + 1, idx] = self.omega_off
        return om


@dataclass
class GaussChainBeliefs:
    mean: np.ndarray
    variance: np.ndarray
    lag_cov: np.ndarray
    logdet_precision: float


def binary_chain_infer(pot: BinaryChainPotentials) -> BinaryChainBeliefs:
    """Exact marginals, pairwise beliefs and log partition of a binary chain."""
    node, edge = pot.node_logpot, pot.edge_logpot
    if not (np.all(np.isfinite(node)) and np.all(np.isfinite(edge))):
        raise InvalidInputError("potentials must be finite")
    n = node.shape[0]
    marg = np.empty((n, 2))
    pair = np.empty((n - 1, 2, 2))
    logz = binary_forward_backward(np.ascontiguousarray(node),
                                   np.ascontiguousarray(edge), marg, pair)
    return BinaryChainBeliefs(marg, pair, float(logz))


def gauss_chain_infer(params: GaussChainParams) -> GaussChainBeliefs:
    """Mean, variances and lag-one covariances of a tridiagonal Gaussian chain.

    Raises
    ------
    NotPositiveDefiniteError
        If the tridiagonal Cholesky hits a pivot at or below the floor.
    """
    n = params.omega_diag.shape[0]
    mean, var, lag = np.empty(n), np.empty(n), np.empty(max(n - 1, 0))
    ok, logdet = tridiag_factor_solve(params.omega_diag, params.omega_off,
                                      params.potential, mean, var, lag)
    if not ok:
        raise NotPositiveDefiniteError("chain precision is not positive definite")
    return GaussChainBeliefs(mean, var, lag, float(logdet))


def binary_chain_entropy(beliefs: BinaryChainBeliefs, pot: BinaryChainPotentials) -> float:
    """Entropy as log partition minus the expected total log potential."""
    expected = np.sum(beliefs.marginals * pot.node_logpot)
    if beliefs.pairwise.size:
        expected += np.sum(beliefs.pairwise * pot.edge_logpot)
    return float(beliefs.log_partition - expected)


def binary_chain_entropy_from_beliefs(marg, pair):
    """Chain entropy from beliefs alone: sum of pair entropies minus
    interior node entropies. Works batched over leading axes."""
    from scipy.special import xlogy

    h_pair = -xlogy(pair, pair).sum(axis=(-1, -2, -3))
    h_node = -xlogy(marg, marg).sum(axis=-1)
    if marg.shape[-2] == 1:
        return h_node[..., 0]
    return h_pair - h_node[..., 1:-1].sum(axis=-1)


def gauss_chain_entropy(beliefs: GaussChainBeliefs) -> float:
    n = beliefs.mean.shape[0]
    return 0.5 * n * LOG_2PI_E - 0.5 * beliefs.logdet_precision
