"""Coordinate-ascent variational inference for dynamic graphical models.

One sweep updates, in order: every edge chain (spike chain, then slab
chains, then the edge smoothness posterior), every diagonal chain by a
line-searched natural-gradient step, the shared hyperparameters, and
finally any missing observations.

Internally all per-variable arrays are laid out (P, N) so that the
compiled kernels walk contiguous time series. The running products
``r_j = <K_{j,-j}> x_{-j}`` are kept in a :class:`PredictorCache` and
patched after every edge update, which keeps a sweep at O(N P^2).

Frequency-domain models use the same machinery with complex data: the
data part of the objective is doubled (complex Gaussian densities carry no
square root) and each slab has a real and an imaginary chain.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.special import betaln, digamma, gammaln

from .chains import LOG_2PI_E, binary_chain_entropy_from_beliefs, binary_forward_backward
from .chains import tridiag_factor_solve, tridiag_solve_jitter
from .data import ObservationSet
from .model import VariationalModel, edge_index, initial_model

log = logging.getLogger(__name__)

_EXP_CAP = 700.0


class NumericalFailure(FloatingPointError):
    """Raised when the objective or an update turns non-finite."""

    def __init__(self, msg, term=None):
        super().__init__(msg)
        self.term = term


@dataclass
class FitConfig:
    max_iters: int = 1000
    anneal_iters: int = 500
    elbo_rel_tol: float = 1e-6
    graph_threshold: float = 0.5
    line_search_shrink: float = 0.5
    line_search_max_steps: int = 20
    rng_seed: int = 0
    edge_order: str = "lexicographic"
    slab_anchor_var: float = 1.0

    def __post_init__(self):
        if self.max_iters < self.anneal_iters:
            raise ValueError("max_iters must be at least anneal_iters")
        if not self.elbo_rel_tol > 0:
            raise ValueError("elbo_rel_tol must be positive")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must lie in (0, 1)")
        if not 0 <= self.graph_threshold <= 1:
            raise ValueError("graph_threshold must be a probability")
        if not self.slab_anchor_var > 0:
            raise ValueError("slab_anchor_var must be positive")
        if self.edge_order not in ("lexicographic", "waves"):
            raise ValueError("edge_order must be 'lexicographic' or 'waves'")


@dataclass
class FitResult:
    model: VariationalModel
    elbo_trace: list
    iterations_run: int
    anneal_acceptance_rate: float
    wall_time_seconds: float
    accepted: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    converged: bool = False

    def trace_rows(self):
        """(iteration, elbo, accepted, rate) tuples for the trace CSV."""
        return [(i + 1, e, int(a), r) for i, (e, a, r)
                in enumerate(zip(self.elbo_trace, self.accepted, self.rates))]


# ---------------------------------------------------------------------------
# observation moments and the predictor cache
# ---------------------------------------------------------------------------

class _Moments:
    """First and second moments of the data, (P, N) layout.

    Observed slots are fixed; masked slots take the imputation factor.
    """

    def __init__(self, xr, xi, xsq, mask=None):
        self.xr = np.ascontiguousarray(xr, dtype=float)
        self.xi = np.ascontiguousarray(xi, dtype=float)
        self.xsq = np.ascontiguousarray(xsq, dtype=float)
        self.mask = mask

    @classmethod
    def from_data(cls, data: ObservationSet, model: VariationalModel):
        v = data.values.T
        m = data.mask.T
        fm = model.x_fill_mean.T
        fv = model.x_fill_var.T
        xr = np.where(m, np.real(v), fm)
        xi = np.where(m, np.imag(v), 0.0) if np.iscomplexobj(v) else np.zeros_like(xr)
        xsq = xr ** 2 + xi ** 2 + np.where(m, 0.0, fv)
        return cls(xr, xi, xsq, m)

    def take(self, idx):
        return _Moments(self.xr[:, idx], self.xi[:, idx], self.xsq[:, idx])

    @property
    def complex_mean(self):
        return self.xr + 1j * self.xi


@dataclass
class PredictorCache:
    """``r_j^(t) = sum_{k != j} <K_jk^(t)> <x_k^(t)>``; stored (P, N)."""
    rr: np.ndarray
    ri: np.ndarray

    @property
    def r(self):
        """The cache as an N x P array (complex for frequency models)."""
        if np.any(self.ri):
            return (self.rr + 1j * self.ri).T
        return self.rr.T.copy()

    def copy(self):
        return PredictorCache(self.rr.copy(), self.ri.copy())


def _dense_k(model: VariationalModel):
    """Dense (P, P, N) arrays of <K> (complex, row j uses K_jk) and <|K|^2>."""
    km, k2 = model.k_moments()
    p = model.P
    jj, kk = model.pairs.T
    dk = np.zeros((p, p, model.N), dtype=complex)
    dk[jj, kk] = km
    dk[kk, jj] = np.conj(km)
    d2 = np.zeros((p, p, model.N))
    d2[jj, kk] = k2
    d2[kk, jj] = k2
    return dk, d2


def _rebuild(model, mom: _Moments):
    dk, _ = _dense_k(model)
    r = np.einsum("jkt,kt->jt", dk, mom.complex_mean)
    return PredictorCache(np.ascontiguousarray(r.real), np.ascontiguousarray(r.imag))


def rebuild_cache(model: VariationalModel, data: ObservationSet) -> PredictorCache:
    """Direct O(N P^2) recomputation of the predictor cache."""
    return _rebuild(model, _Moments.from_data(data, model))


def _residual_second_moment(model, mom: _Moments, cache: PredictorCache):
    """``Q_j^(t) = <|K_{j,-j} x_{-j}|^2>`` for all j, t (P, N)."""
    dk, d2 = _dense_k(model)
    xabs = mom.xr ** 2 + mom.xi ** 2
    var_part = (np.einsum("jkt,kt->jt", d2, mom.xsq)
                - np.einsum("jkt,kt->jt", np.abs(dk) ** 2, xabs))
    return cache.rr ** 2 + cache.ri ** 2 + var_part


# ---------------------------------------------------------------------------
# edge sweep kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _edge_grad(t, j, k, kr, ki, xr, xi, xsq, rr, ri, en, cd):
    xjr = xr[j, t]
    xji = xi[j, t]
    xkr = xr[k, t]
    xki = xi[k, t]
    # own edge excluded from both running products
    rjr = rr[j, t] - (kr * xkr - ki * xki)
    rji = ri[j, t] - (kr * xki + ki * xkr)
    rkr = rr[k, t] - (kr * xjr + ki * xji)
    rki = ri[k, t] - (kr * xji - ki * xjr)
    enj = en[j, t]
    enk = en[k, t]
    cr = (-2.0 * (xjr * xkr + xji * xki) - enj * (rjr * xkr + rji * xki)
          - enk * (rkr * xjr + rki * xji))
    ci = (-2.0 * (xjr * xki - xji * xkr) - enj * (rjr * xki - rji * xkr)
          - enk * (rki * xjr - rkr * xji))
    g2 = -0.5 * cd * (enj * xsq[k, t] + enk * xsq[j, t])
    return cd * cr, -cd * ci, g2


@njit(cache=True)
def _patch_cache(t, j, k, dkr, dki, xr, xi, rr, ri):
    # add (K_new - K_old) x_k to row j and conj(K_new - K_old) x_j to row k
    rr[j, t] += dkr * xr[k, t] - dki * xi[k, t]
    ri[j, t] += dkr * xi[k, t] + dki * xr[k, t]
    rr[k, t] += dkr * xr[j, t] + dki * xi[j, t]
    ri[k, t] += dkr * xi[j, t] - dki * xr[j, t]


@njit(cache=True)
def _slab_block(e, ncomp, n, al, anchor, cd, s_marg, ga, gb, g2, d, off, h, tm, tv, tc, tld):
    """Solve the slab chains of edge ``e`` at smoothness ``al / cd``.

    Returns ``(ok, objective, stat, jittered)``: the objective collects every
    term of the bound that depends on the slab beliefs, ``stat`` is the summed
    expected squared increment.
    """
    f = 0.0
    stat = 0.0
    jittered = False
    for c in range(ncomp):
        for t in range(n):
            deg = 2.0 if 0 < t < n - 1 else 1.0
            d[t] = al * deg - 2.0 * g2[t] * s_marg[e, t]
            h[t] = (ga[t] if c == 0 else gb[t]) * s_marg[e, t]
        d[0] += cd * anchor
        for t in range(n - 1):
            off[t] = -al
        ok, ld, jit = tridiag_solve_jitter(d, off, h, tm[c], tv[c], tc[c])
        jittered = jittered or jit
        if not ok:
            return False, 0.0, 0.0, jittered
        tld[c] = ld
        st = 0.0
        for t in range(n):
            f += h[t] * tm[c, t] + g2[t] * s_marg[e, t] * (tm[c, t] ** 2 + tv[c, t])
        for t in range(n - 1):
            dm = tm[c, t + 1] - tm[c, t]
            st += dm * dm + tv[c, t + 1] + tv[c, t] - 2.0 * tc[c, t]
        stat += st
        f -= 0.5 * al * st
        f -= 0.5 * cd * anchor * (tm[c, 0] ** 2 + tv[c, 0])
        f -= 0.5 * ld
    return True, f, stat, jittered


@njit(cache=True)
def _edge_sweep(order, pj, pk, s_marg, s_pair, jm, jv, jc, jld, a_shape, a_rate,
                xr, xi, xsq, rr, ri, en,
                wr, xr2, xi2, xsq2, rr2, ri2,
                lp1, lp0, ltrans, alpha_noise, anchor, cd, ncomp):
    n = s_marg.shape[1]
    noisy = wr < 1.0
    node = np.zeros((n, 2))
    edge = np.empty((n - 1, 2, 2))
    for t in range(n - 1):
        for a in range(2):
            for b in range(2):
                edge[t, a, b] = ltrans[a, b]
    ga = np.empty(n)
    gb = np.empty(n)
    g2 = np.empty(n)
    kr_old = np.empty(n)
    ki_old = np.empty(n)
    marg = np.empty((n, 2))
    pair = np.empty((n - 1, 2, 2))
    d = np.empty(n)
    off = np.empty(n - 1)
    h = np.empty(n)
    tm = np.empty((ncomp, n))
    tv = np.empty((ncomp, n))
    tc = np.empty((ncomp, n - 1))
    tld = np.empty(ncomp)
    n_jitter = 0
    n_fail = 0
    for idx in range(order.shape[0]):
        e = order[idx]
        j = pj[e]
        k = pk[e]
        for t in range(n):
            s = s_marg[e, t]
            kr = s * jm[e, 0, t]
            ki = s * jm[e, 1, t] if ncomp == 2 else 0.0
            kr_old[t] = kr
            ki_old[t] = ki
            a_, b_, c_ = _edge_grad(t, j, k, kr, ki, xr, xi, xsq, rr, ri, en, cd)
            if noisy:
                a2, b2, c2 = _edge_grad(t, j, k, kr, ki, xr2, xi2, xsq2, rr2, ri2, en, cd)
                a_ = wr * a_ + (1.0 - wr) * a2
                b_ = wr * b_ + (1.0 - wr) * b2
                c_ = wr * c_ + (1.0 - wr) * c2
            ga[t] = a_
            gb[t] = b_
            g2[t] = c_

        # spike chain, using the current slab moments
        for t in range(n):
            jsq = jm[e, 0, t] ** 2 + jv[e, 0, t]
            lin = ga[t] * jm[e, 0, t]
            if ncomp == 2:
                jsq += jm[e, 1, t] ** 2 + jv[e, 1, t]
                lin += gb[t] * jm[e, 1, t]
            node[t, 0] = 0.0
            node[t, 1] = lin + g2[t] * jsq
        node[0, 1] += lp1
        node[0, 0] += lp0
        binary_forward_backward(node, edge, marg, pair)
        for t in range(n):
            s_marg[e, t] = marg[t, 1]
        for t in range(n - 1):
            for a in range(2):
                for b in range(2):
                    s_pair[e, t, a, b] = pair[t, a, b]

        # slab chains (using the new spike marginals), then q(alpha)
        al = cd * (wr * a_shape[e] / a_rate[e] + (1.0 - wr) * alpha_noise[e])
        ok, f, stat, jit = _slab_block(e, ncomp, n, al, anchor, cd, s_marg, ga, gb, g2,
                                       d, off, h, tm, tv, tc, tld)
        if jit:
            n_jitter += 1
        if not ok:
            n_fail += 1
        else:
            for c in range(ncomp):
                jld[e, c] = tld[c]
                for t in range(n):
                    jm[e, c, t] = tm[c, t]
                    jv[e, c, t] = tv[c, t]
                for t in range(n - 1):
                    jc[e, c, t] = tc[c, t]
            rate = 0.5 * cd * stat
            a_rate[e] = rate if rate > 1e-300 else 1e-300

        for t in range(n):
            s = s_marg[e, t]
            dkr = s * jm[e, 0, t] - kr_old[t]
            dki = (s * jm[e, 1, t] if ncomp == 2 else 0.0) - ki_old[t]
            _patch_cache(t, j, k, dkr, dki, xr, xi, rr, ri)
            if noisy:
                _patch_cache(t, j, k, dkr, dki, xr2, xi2, rr2, ri2)
    return n_jitter, n_fail


def _wave_order(p):
    """Round-robin schedule: edges grouped into perfect matchings."""
    ids = list(range(p)) + ([None] if p % 2 else [])
    m = len(ids)
    order = []
    for _ in range(m - 1):
        for i in range(m // 2):
            a, b = ids[i], ids[m - 1 - i]
            if a is not None and b is not None:
                order.append(edge_index(p, a, b))
        ids = [ids[0]] + [ids[-1]] + ids[1:-1]
    return np.asarray(order, dtype=np.int64)


def edge_waves(p):
    """Partition of all edges into groups with pairwise disjoint endpoints."""
    order = _wave_order(p)
    size = p // 2
    return [order[i:i + size] for i in range(0, len(order), size)]


# ---------------------------------------------------------------------------
# the working state of a fit
# ---------------------------------------------------------------------------

@dataclass
class _Noise:
    """Bootstrapped data and sampled hyperparameters for an annealed sweep."""
    weight: float
    mom: _Moments
    cache: PredictorCache
    log_pi1: float
    log_1m_pi1: float
    log_a00: float
    log_1m_a00: float
    log_a11: float
    log_1m_a11: float
    alpha: np.ndarray
    beta: float


class Workspace:
    """Model, data moments and cache bundled for the sweep."""

    def __init__(self, model: VariationalModel, data: ObservationSet, order="lexicographic"):
        if (data.N, data.P) != (model.N, model.P):
            raise ValueError("data dimensions do not match the model")
        self.model = model
        self.data = data
        self.cd = 1.0 if model.domain == "time" else 2.0
        self.mom = _Moments.from_data(data, model)
        self.cache = _rebuild(model, self.mom)
        pairs = model.pairs
        self.pj = np.ascontiguousarray(pairs[:, 0], dtype=np.int64)
        self.pk = np.ascontiguousarray(pairs[:, 1], dtype=np.int64)
        if order == "waves":
            self.order = _wave_order(model.P)
        else:
            self.order = np.arange(model.n_edges, dtype=np.int64)
        self.flags = {"jitter": 0, "chain_failures": 0, "stalled_diag": 0,
                      "empty_time_points": 0}

    def refresh_moments(self):
        self.mom = _Moments.from_data(self.data, self.model)
        self.cache = _rebuild(self.model, self.mom)

    def snapshot(self):
        return self.model.copy(), self.cache.copy(), self.mom

    def restore(self, snap):
        model, cache, mom = snap
        self.model.__dict__.update(model.__dict__)
        self.cache = cache
        self.mom = mom


def _transition_logs(lp00, lp01, lp11, lp10):
    lt = np.empty((2, 2))
    lt[0, 0], lt[0, 1], lt[1, 1], lt[1, 0] = lp00, lp01, lp11, lp10
    return lt


def _sweep_edges(ws: Workspace, order=None, noise: Optional[_Noise] = None):
    m = ws.model
    h = m.hypers
    alpha = m.alpha_mean
    lp1, lp0 = h.e_log_pi1, h.e_log_1m_pi1
    lt = _transition_logs(h.e_log_a00, h.e_log_1m_a00, h.e_log_a11, h.e_log_1m_a11)
    if noise is not None:
        w = noise.weight
        lp1 = w * lp1 + (1 - w) * noise.log_pi1
        lp0 = w * lp0 + (1 - w) * noise.log_1m_pi1
        lt = w * lt + (1 - w) * _transition_logs(noise.log_a00, noise.log_1m_a00,
                                                 noise.log_a11, noise.log_1m_a11)
        alpha = noise.alpha
        nm, nc = noise.mom, noise.cache
    else:
        w = 1.0
        nm, nc = ws.mom, ws.cache
    jm, jv = m.j_mean, m.j_var
    n_jit, n_fail = _edge_sweep(
        ws.order if order is None else np.asarray(order, dtype=np.int64),
        ws.pj, ws.pk, m.s_marg, m.s_pair, jm, jv, m.j_lag, m.j_logdet,
        m.alpha_shape, m.alpha_rate,
        ws.mom.xr, ws.mom.xi, ws.mom.xsq, ws.cache.rr, ws.cache.ri,
        np.ascontiguousarray(m.exp_neg),
        w, nm.xr, nm.xi, nm.xsq, nc.rr, nc.ri,
        lp1, lp0, lt, np.ascontiguousarray(alpha, dtype=float),
        1.0 / m.slab_anchor_var,
        ws.cd, m.n_comp)
    ws.flags["jitter"] += n_jit
    ws.flags["chain_failures"] += n_fail


# ---------------------------------------------------------------------------
# public single-coordinate operations
# ---------------------------------------------------------------------------

def edge_gradients(model: VariationalModel, cache: PredictorCache, data: ObservationSet,
                   j, k, t):
    """``(dL1/d<K_jk>, dL1/d<K_jk^2>)`` at covariate index ``t``.

    For frequency models the first value is complex: its real and
    imaginary parts are the derivatives w.r.t. the real and imaginary
    parts of ``<K_jk>`` (row ``j`` convention).
    """
    if j > k:
        j, k = k, j
    mom = _Moments.from_data(data, model)
    e = edge_index(model.P, j, k)
    s = model.s_marg[e, t]
    kr = s * model.j_mean[e, 0, t]
    ki = s * model.j_mean[e, 1, t] if model.n_comp == 2 else 0.0
    cd = 1.0 if model.domain == "time" else 2.0
    ga, gb, g2 = _edge_grad(t, j, k, kr, ki, mom.xr, mom.xi, mom.xsq, cache.rr, cache.ri,
                            np.ascontiguousarray(model.exp_neg), cd)
    if model.n_comp == 1:
        return float(ga), float(g2)
    return complex(ga, gb), float(g2)


def update_edge_chain(model: VariationalModel, cache: PredictorCache, data: ObservationSet,
                      j, k):
    """Refresh q(s_jk), q(J_jk) and q(alpha_jk); patches ``cache`` in place."""
    ws = Workspace.__new__(Workspace)
    ws.model, ws.data = model, data
    ws.cd = 1.0 if model.domain == "time" else 2.0
    ws.mom = _Moments.from_data(data, model)
    ws.cache = cache
    pairs = model.pairs
    ws.pj = np.ascontiguousarray(pairs[:, 0], dtype=np.int64)
    ws.pk = np.ascontiguousarray(pairs[:, 1], dtype=np.int64)
    ws.flags = {"jitter": 0, "chain_failures": 0}
    _sweep_edges(ws, order=[edge_index(model.P, j, k)])
    return model.edge(j, k)


def _diag_targets(ep, en, km, x2, q, beta, cd):
    half = 0.5 * cd
    n = km.shape[0]
    deg = np.full(n, 2.0)
    deg[0] = deg[-1] = 1.0
    h = half * (1.0 - x2 * ep * (1.0 - km) + q * en * (1.0 + km))
    d = beta * deg + half * (x2 * ep + q * en)
    off = np.full(n - 1, -beta)
    return d, off, h


def _diag_objective(mean, var, lag, logdet, x2, q, beta, cd):
    up = np.minimum(mean + 0.5 * var, _EXP_CAP)
    dn = np.minimum(-mean + 0.5 * var, _EXP_CAP)
    data = cd * np.sum(0.5 * mean - 0.5 * x2 * np.exp(up) - 0.5 * q * np.exp(dn))
    dm = np.diff(mean)
    smooth = np.sum(dm ** 2 + var[1:] + var[:-1] - 2.0 * lag)
    n = mean.shape[0]
    return data - 0.5 * beta * smooth + 0.5 * n * LOG_2PI_E - 0.5 * logdet


def _update_diag(model, j, x2, q, beta, cd, rho, shrink, max_steps):
    """Natural-gradient step on the kappa chain of variable ``j``.

    Returns the accepted step size, or None when no step was accepted.
    """
    km, kv, kl, kld = model.k_mean[j], model.k_var[j], model.k_lag[j], model.k_logdet[j]
    ep, en = model.exp_pos[j], model.exp_neg[j]
    td, to, th = _diag_targets(ep, en, km, x2, q, beta, cd)
    od, oo, oh = model.k_prec_diag[j], model.k_prec_off[j], model.k_potential[j]
    f_old = _diag_objective(km, kv, kl, kld, x2, q, beta, cd)
    n = km.shape[0]
    mean, var, lag = np.empty(n), np.empty(n), np.empty(n - 1)
    steps = [rho] if rho is not None else [shrink ** i for i in range(max_steps)]
    for r in steps:
        if r == 0:
            return 0.0
        d = (1 - r) * od + r * td
        o = (1 - r) * oo + r * to
        h = (1 - r) * oh + r * th
        ok, ld = tridiag_factor_solve(d, o, h, mean, var, lag)
        if not ok:
            continue
        f_new = _diag_objective(mean, var, lag, ld, x2, q, beta, cd)
        if rho is not None or f_new >= f_old - 1e-12 * max(1.0, abs(f_old)):
            model.k_prec_diag[j], model.k_prec_off[j], model.k_potential[j] = d, o, h
            model.k_mean[j], model.k_var[j], model.k_lag[j] = mean, var, lag
            model.k_logdet[j] = ld
            up = np.minimum(mean + 0.5 * var, _EXP_CAP)
            dn = np.minimum(-mean + 0.5 * var, _EXP_CAP)
            model.exp_pos[j], model.exp_neg[j] = np.exp(up), np.exp(dn)
            return r
    return None


def _sweep_diags(ws: Workspace, noise: Optional[_Noise], config: FitConfig, rho=None):
    m = ws.model
    q = _residual_second_moment(m, ws.mom, ws.cache)
    x2 = ws.mom.xsq
    beta = m.hypers.e_beta
    if noise is not None:
        w = noise.weight
        q = w * q + (1 - w) * _residual_second_moment(m, noise.mom, noise.cache)
        x2 = w * x2 + (1 - w) * noise.mom.xsq
        beta = w * beta + (1 - w) * noise.beta
    for j in range(m.P):
        r = _update_diag(m, j, x2[j], q[j], beta, ws.cd, rho,
                         config.line_search_shrink, config.line_search_max_steps)
        if r is None:
            ws.flags["stalled_diag"] += 1


def update_diag_chain(model: VariationalModel, cache: PredictorCache, data: ObservationSet,
                      j, rho=None, config: Optional[FitConfig] = None):
    """Natural-gradient update of q(kappa_j).

    With ``rho=None`` the step is backtracked from 1 until the objective
    does not decrease; if no step qualifies the state is left unchanged
    and ``model.flags['stalled_diag']`` is incremented.
    """
    config = config or FitConfig()
    mom = _Moments.from_data(data, model)
    q = _residual_second_moment(model, mom, cache)
    cd = 1.0 if model.domain == "time" else 2.0
    r = _update_diag(model, j, mom.xsq[j], q[j], model.hypers.e_beta, cd, rho,
                     config.line_search_shrink, config.line_search_max_steps)
    if r is None:
        model.flags["stalled_diag"] = model.flags.get("stalled_diag", 0) + 1
    return model.diag(j)


def _smooth_stat(mean, var, lag):
    dm = np.diff(mean, axis=-1)
    return np.sum(dm ** 2 + var[..., 1:] + var[..., :-1] - 2.0 * lag, axis=-1)


def update_hyperparameters(model: VariationalModel):
    """Conjugate updates of pi1, A00, A11, beta and every alpha_jk."""
    h = model.hypers
    s1 = model.s_marg[:, 0]
    h.a = 1.0 + float(np.sum(s1))
    h.b = 1.0 + float(np.sum(1.0 - s1))
    tot = model.s_pair.sum(axis=(0, 1))  # [prev, next]
    h.c0 = 1.0 + float(tot[0, 0])
    h.d0 = 1.0 + float(tot[0, 1])
    h.c1 = 1.0 + float(tot[1, 1])
    h.d1 = 1.0 + float(tot[1, 0])
    n, p = model.N, model.P
    h.beta_shape = p * (n - 1) / 2.0
    h.beta_rate = max(0.5 * float(np.sum(_smooth_stat(model.k_mean, model.k_var, model.k_lag))),
                      1e-300)
    h.refresh()
    cd = 1.0 if model.domain == "time" else 2.0
    model.alpha_shape[:] = model.n_comp * (n - 1) / 2.0
    stat = _smooth_stat(model.j_mean, model.j_var, model.j_lag).sum(axis=1)
    model.alpha_rate[:] = np.maximum(0.5 * cd * stat, 1e-300)
    return h


@njit(cache=True)
def _impute(ts, js, xr, xsq, fill_var, rr, ep, en, dk, d2):
    p = xr.shape[0]
    for i in range(ts.shape[0]):
        t = ts[i]
        j = js[i]
        prec = ep[j, t]
        lin = -2.0 * rr[j, t]
        for k in range(p):
            if k == j:
                continue
            kk = dk[k, j, t]
            prec += en[k, t] * d2[k, j, t]
            lin -= en[k, t] * kk * (rr[k, t] - kk * xr[j, t])
        mean = lin / prec
        v = 1.0 / prec
        delta = mean - xr[j, t]
        for k in range(p):
            if k != j:
                rr[k, t] += dk[k, j, t] * delta
        xr[j, t] = mean
        xsq[j, t] = mean * mean + v
        fill_var[j, t] = v


def update_missing_values(model: VariationalModel, data: ObservationSet,
                          cache: Optional[PredictorCache] = None):
    """Gaussian coordinate update of every masked entry (time domain).

    Each masked ``x_j^(t)`` collects the terms of the objective that are
    quadratic or linear in it: its own row and its appearances in the
    other rows' products. Time points with no observed value fall back to
    a standard normal factor. Returns the number of such time points.
    """
    if model.domain != "time":
        raise ValueError("missing-value imputation is only defined for time-domain data")
    if not data.has_missing:
        return 0
    mom = _Moments.from_data(data, model)
    if cache is None:
        cache = _rebuild(model, mom)
    dk, d2 = _dense_k(model)
    miss = ~data.mask
    empty = ~data.mask.any(axis=1)
    ts, js = np.nonzero(miss & ~empty[:, None])
    fill_var = model.x_fill_var.T.copy()
    _impute(ts.astype(np.int64), js.astype(np.int64), mom.xr, mom.xsq, fill_var, cache.rr,
            np.ascontiguousarray(model.exp_pos), np.ascontiguousarray(model.exp_neg),
            np.ascontiguousarray(dk.real), d2)
    fm = mom.xr.T.copy()
    fv = fill_var.T.copy()
    fm[empty] = 0.0
    fv[empty] = 1.0
    model.x_fill_mean = np.where(data.mask, 0.0, fm)
    model.x_fill_var = np.where(data.mask, 0.0, fv)
    n_empty = int(empty.sum())
    if n_empty:
        model.flags["empty_time_points"] = n_empty
    return n_empty


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def _beta_entropy(a, b):
    return (betaln(a, b) - (a - 1) * digamma(a) - (b - 1) * digamma(b)
            + (a + b - 2) * digamma(a + b))


def _gamma_entropy(shape, rate):
    return shape - np.log(rate) + gammaln(shape) + (1 - shape) * digamma(shape)


def expected_log_likelihood(model: VariationalModel, mom: _Moments, km=None, k2=None):
    """Data part of the objective as a function of the edge moments.

    ``km`` (E, N; complex for frequency models) and ``k2`` (E, N) default
    to the model's current ``<K>`` and ``<|K|^2>``; passing them lets the
    caller vary them independently.
    """
    if km is None or k2 is None:
        km0, k20 = model.k_moments()
        km = km0 if km is None else km
        k2 = k20 if k2 is None else k2
    p = model.P
    jj, kk = model.pairs.T
    dk = np.zeros((p, p, model.N), dtype=complex)
    dk[jj, kk] = km
    dk[kk, jj] = np.conj(km)
    d2 = np.zeros((p, p, model.N))
    d2[jj, kk] = k2
    d2[kk, jj] = k2
    xm = mom.complex_mean
    r = np.einsum("jkt,kt->jt", dk, xm)
    q = (np.abs(r) ** 2 + np.einsum("jkt,kt->jt", d2, mom.xsq)
         - np.einsum("jkt,kt->jt", np.abs(dk) ** 2, np.abs(xm) ** 2))
    cd = 1.0 if model.domain == "time" else 2.0
    terms = (0.5 * model.k_mean - 0.5 * model.exp_pos * mom.xsq
             - np.real(np.conj(xm) * r) - 0.5 * model.exp_neg * q)
    return cd * float(np.sum(terms))


def elbo_terms(model: VariationalModel, data: ObservationSet, mom: Optional[_Moments] = None):
    """Every term of the objective, keyed by name (constants dropped)."""
    if mom is None:
        mom = _Moments.from_data(data, model)
    h = model.hypers
    n, p = model.N, model.P
    cd = 1.0 if model.domain == "time" else 2.0
    out = {}
    out["likelihood"] = expected_log_likelihood(model, mom)
    s1 = model.s_marg[:, 0]
    out["spike_initial"] = float(np.sum(s1 * h.e_log_pi1 + (1 - s1) * h.e_log_1m_pi1))
    tot = model.s_pair.sum(axis=(0, 1))
    out["spike_transition"] = float(tot[0, 0] * h.e_log_a00 + tot[0, 1] * h.e_log_1m_a00
                                    + tot[1, 1] * h.e_log_a11 + tot[1, 0] * h.e_log_1m_a11)
    a_shape, a_rate = model.alpha_shape, model.alpha_rate
    e_alpha = a_shape / a_rate
    e_log_alpha = digamma(a_shape) - np.log(a_rate)
    stat = 0.5 * cd * _smooth_stat(model.j_mean, model.j_var, model.j_lag).sum(axis=1)
    prior_shape = model.n_comp * (n - 1) / 2.0
    out["slab_prior"] = float(np.sum(-e_alpha * stat + (prior_shape - 1.0) * e_log_alpha))
    first = np.sum(model.j_mean[:, :, 0] ** 2 + model.j_var[:, :, 0])
    out["slab_anchor"] = float(-0.5 * cd * first / model.slab_anchor_var)
    kstat = float(np.sum(_smooth_stat(model.k_mean, model.k_var, model.k_lag)))
    out["kappa_prior"] = -0.5 * h.e_beta * kstat + (p * (n - 1) / 2.0 - 1.0) * h.e_log_beta
    out["entropy_spike"] = float(np.sum(binary_chain_entropy_from_beliefs(
        np.stack([1 - model.s_marg, model.s_marg], axis=-1), model.s_pair)))
    out["entropy_slab"] = float(0.5 * n * LOG_2PI_E * model.j_logdet.size
                                - 0.5 * np.sum(model.j_logdet))
    out["entropy_kappa"] = float(0.5 * n * LOG_2PI_E * p - 0.5 * np.sum(model.k_logdet))
    out["entropy_beta_dists"] = float(_beta_entropy(h.a, h.b) + _beta_entropy(h.c0, h.d0)
                                      + _beta_entropy(h.c1, h.d1))
    out["entropy_gamma_dists"] = float(np.sum(_gamma_entropy(a_shape, a_rate))
                                       + _gamma_entropy(h.beta_shape, h.beta_rate))
    miss = ~data.mask
    if miss.any():
        v = model.x_fill_var[miss]
        out["entropy_missing"] = float(np.sum(0.5 * np.log(2 * np.pi * np.e * v)))
    return out


def compute_elbo(model: VariationalModel, data: ObservationSet, mom=None) -> float:
    """Evidence lower bound up to an additive constant fixed by the data shape.

    Raises
    ------
    NumericalFailure
        When a term is not finite; ``.term`` names it.
    """
    terms = elbo_terms(model, data, mom)
    for name, v in terms.items():
        if not np.isfinite(v):
            raise NumericalFailure(f"non-finite objective term {name!r}", term=name)
    return float(sum(terms.values()))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def sweep(ws: Workspace, config: FitConfig, noise: Optional[_Noise] = None):
    """One full coordinate-ascent sweep over all blocks."""
    _sweep_edges(ws, noise=noise)
    _sweep_diags(ws, noise, config)
    update_hyperparameters(ws.model)
    if ws.data.has_missing:
        n_empty = update_missing_values(ws.model, ws.data, ws.cache)
        ws.flags["empty_time_points"] = n_empty
        ws.refresh_moments()


def _make_noise(ws: Workspace, anneal, rate) -> _Noise:
    m = ws.model
    idx = anneal.indices(m.N, rate)
    mom = ws.mom.take(idx)
    cache = _rebuild(m, mom)
    xi = anneal.sample_hypers(m)
    return _Noise(weight=rate, mom=mom, cache=cache,
                  log_pi1=np.log(xi.pi1), log_1m_pi1=np.log1p(-xi.pi1),
                  log_a00=np.log(xi.a00), log_1m_a00=np.log1p(-xi.a00),
                  log_a11=np.log(xi.a11), log_1m_a11=np.log1p(-xi.a11),
                  alpha=xi.alpha, beta=xi.beta)


def fit(data: ObservationSet, config: Optional[FitConfig] = None, anneal=None,
        model: Optional[VariationalModel] = None, callback=None) -> FitResult:
    """Fit the dynamic graphical model to ``data``.

    ``anneal`` is an :class:`badge.anneal.AnnealDriver` or None for plain
    coordinate ascent. ``callback(iteration, workspace)`` is invoked after
    every sweep.
    """
    config = config or FitConfig()
    if data.N < 2 or data.P < 2:
        raise ValueError("need at least two covariate points and two variables")
    domain = "time" if data.axis == "time" else "frequency"
    if domain == "frequency" and data.has_missing:
        raise ValueError("frequency-domain fits need complete coefficients")
    t0 = time.perf_counter()
    if model is None:
        model = initial_model(data.values, data.mask, domain,
                              slab_anchor_var=config.slab_anchor_var)
    ws = Workspace(model, data, config.edge_order)
    elbo = compute_elbo(model, data, ws.mom)
    trace, accepted, rates = [], [], []
    converged = False
    it = 0
    n_anneal = anneal.n_anneal if anneal is not None else 0
    for it in range(1, config.max_iters + 1):
        rate = anneal.rate(it) if anneal is not None else 1.0
        if rate < 1.0:
            snap = ws.snapshot()
            noise = _make_noise(ws, anneal, rate)
            sweep(ws, config, noise)
            new = compute_elbo(model, data, ws.mom)
            ok = anneal.accept(new, elbo, rate)
            if ok:
                elbo = new
            else:
                ws.restore(snap)
        else:
            sweep(ws, config)
            new = compute_elbo(model, data, ws.mom)
            ok = True
            prev, elbo = elbo, new
            if it > n_anneal + 1 and abs(new - prev) < config.elbo_rel_tol * abs(prev):
                converged = True
        trace.append(elbo)
        accepted.append(ok)
        rates.append(rate)
        if callback is not None:
            callback(it, ws)
        if converged:
            break
    model.flags.update(ws.flags)
    wall = time.perf_counter() - t0
    acc_rate = anneal.acceptance_rate if anneal is not None else float("nan")
    log.info("fit finished after %d iterations (%.1fs), elbo %.6g", it, wall, elbo)
    return FitResult(model=model, elbo_trace=trace, iterations_run=it,
                     anneal_acceptance_rate=acc_rate, wall_time_seconds=wall,
                     accepted=accepted, rates=rates, flags=dict(ws.flags),
                     converged=converged)
