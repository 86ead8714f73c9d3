"""Variational state and closed-form moment helpers.

The state is stored stacked over edges so that the sweep can hand whole
arrays to the compiled kernels; :meth:`VariationalModel.edge` and
:meth:`VariationalModel.diag` give per-edge and per-variable views.
Edges are ordered lexicographically over ``j < k``.

Complex (frequency-domain) models carry two slab components per edge,
the real and imaginary parts of ``J``; time-domain models carry one.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from .chains import GaussChainBeliefs, GaussChainParams

FORMAT_NAME = "badge-model"
FORMAT_VERSION = 1

_EXP_CAP = 700.0


class NumericalOverflowWarning(RuntimeWarning):
    pass


def edge_pairs(p):
    """All pairs ``(j, k)``, ``j < k``, in lexicographic order."""
    j, k = np.triu_indices(p, 1)
    return np.stack([j, k], axis=1)


def edge_index(p, j, k):
    if j == k:
        raise ValueError("no edge on the diagonal")
    if j > k:
        j, k = k, j
    return j * p - j * (j + 1) // 2 + (k - j - 1)


# ---------------------------------------------------------------------------
# moment helpers
# ---------------------------------------------------------------------------

def lognormal_moments(mean, variance):
    """``<exp(k)>`` and ``<exp(-k)>`` for ``k ~ N(mean, variance)``.

    Exponents are capped at 700; a :class:`NumericalOverflowWarning` is
    emitted when the cap is hit.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    up = mean + 0.5 * variance
    dn = -mean + 0.5 * variance
    if np.any(up > _EXP_CAP) or np.any(dn > _EXP_CAP):
        warnings.warn("log-normal moment saturated", NumericalOverflowWarning,
                      stacklevel=2)
        up = np.minimum(up, _EXP_CAP)
        dn = np.minimum(dn, _EXP_CAP)
    ep, en = np.exp(up), np.exp(dn)
    if ep.ndim == 0:
        return float(ep), float(en)
    return ep, en


def edge_k_moments(e: "EdgeState", t: int):
    """``(<K>, <K^2>)`` of one edge at covariate index ``t``.

    Uses ``K = s J`` with binary ``s`` (so ``s^2 = s``) independent of
    ``J``. For complex edges ``<K>`` is complex and the second value is
    ``<|K|^2>``.
    """
    s = e.s_marginal[t]
    jm = e.j_mean[:, t]
    k2 = s * float(np.sum(jm ** 2 + e.j_var[:, t]))
    if jm.shape[0] == 1:
        return s * float(jm[0]), k2
    return s * complex(jm[0], jm[1]), k2


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

@dataclass
class EdgeState:
    s_marginal: np.ndarray
    s_pairwise: np.ndarray
    j_mean: np.ndarray       # (C, N)
    j_var: np.ndarray        # (C, N)
    j_lag_cov: np.ndarray    # (C, N-1)
    alpha_shape: float
    alpha_rate: float

    @property
    def alpha_mean(self):
        return self.alpha_shape / self.alpha_rate


@dataclass
class DiagState:
    chain: GaussChainParams
    beliefs: GaussChainBeliefs
    exp_pos: np.ndarray
    exp_neg: np.ndarray


@dataclass
class HyperState:
    """Beta posteriors of ``pi1``, ``A00``, ``A11`` and the Gamma posterior of
    the diagonal smoothness ``beta``, with cached expectations."""
    a: float = 1.0
    b: float = 1.0
    c0: float = 1.0
    d0: float = 1.0
    c1: float = 1.0
    d1: float = 1.0
    beta_shape: float = 1.0
    beta_rate: float = 1.0
    e_log_pi1: float = field(default=0.0, init=False)
    e_log_1m_pi1: float = field(default=0.0, init=False)
    e_log_a00: float = field(default=0.0, init=False)
    e_log_1m_a00: float = field(default=0.0, init=False)
    e_log_a11: float = field(default=0.0, init=False)
    e_log_1m_a11: float = field(default=0.0, init=False)
    e_beta: float = field(default=0.0, init=False)
    e_log_beta: float = field(default=0.0, init=False)

    def __post_init__(self):
        self.refresh()

    def refresh(self):
        for name in ("a", "b", "c0", "d0", "c1", "d1", "beta_shape", "beta_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"hyperparameter {name} must be positive")
        self.e_log_pi1, self.e_log_1m_pi1 = _beta_logs(self.a, self.b)
        self.e_log_a00, self.e_log_1m_a00 = _beta_logs(self.c0, self.d0)
        self.e_log_a11, self.e_log_1m_a11 = _beta_logs(self.c1, self.d1)
        self.e_beta = self.beta_shape / self.beta_rate
        self.e_log_beta = float(digamma(self.beta_shape) - np.log(self.beta_rate))
        return self

    def shapes(self):
        return dict(a=self.a, b=self.b, c0=self.c0, d0=self.d0, c1=self.c1,
                    d1=self.d1, beta_shape=self.beta_shape, beta_rate=self.beta_rate)


def _beta_logs(a, b):
    dab = digamma(a + b)
    return float(digamma(a) - dab), float(digamma(b) - dab)


def hyper_expectations(h: HyperState) -> HyperState:
    """Return a copy of ``h`` with all cached expectations recomputed."""
    return HyperState(**h.shapes())


@dataclass
class VariationalModel:
    """Mean-field variational posterior over all latent blocks."""
    P: int
    N: int
    domain: str
    s_marg: np.ndarray       # (E, N)   q(s = 1)
    s_pair: np.ndarray       # (E, N-1, 2, 2)   q(s_t = a, s_{t+1} = b)
    j_mean: np.ndarray       # (E, C, N)
    j_var: np.ndarray        # (E, C, N)
    j_lag: np.ndarray        # (E, C, N-1)
    j_logdet: np.ndarray     # (E, C)
    alpha_shape: np.ndarray  # (E,)
    alpha_rate: np.ndarray   # (E,)
    k_prec_diag: np.ndarray  # (P, N)
    k_prec_off: np.ndarray   # (P, N-1)
    k_potential: np.ndarray  # (P, N)
    k_mean: np.ndarray       # (P, N)
    k_var: np.ndarray        # (P, N)
    k_lag: np.ndarray        # (P, N-1)
    k_logdet: np.ndarray     # (P,)
    exp_pos: np.ndarray      # (P, N)
    exp_neg: np.ndarray      # (P, N)
    hypers: HyperState
    x_fill_mean: np.ndarray  # (N, P), imputed means at masked slots
    x_fill_var: np.ndarray   # (N, P), imputed variances (0 where observed)
    flags: dict = field(default_factory=dict)
    slab_anchor_var: float = 1.0   # prior variance of the first slab value

    def __post_init__(self):
        if self.domain not in ("time", "frequency"):
            raise ValueError("domain must be 'time' or 'frequency'")
        e = self.P * (self.P - 1) // 2
        if self.s_marg.shape != (e, self.N):
            raise ValueError("edge arrays must cover P(P-1)/2 pairs")

    @property
    def n_edges(self):
        return self.P * (self.P - 1) // 2

    @property
    def n_comp(self):
        return 1 if self.domain == "time" else 2

    @property
    def pairs(self):
        return edge_pairs(self.P)

    @property
    def alpha_mean(self):
        return self.alpha_shape / self.alpha_rate

    def edge(self, j, k) -> EdgeState:
        e = edge_index(self.P, j, k)
        return EdgeState(self.s_marg[e].copy(), self.s_pair[e].copy(),
                         self.j_mean[e].copy(), self.j_var[e].copy(),
                         self.j_lag[e].copy(), float(self.alpha_shape[e]),
                         float(self.alpha_rate[e]))

    def set_edge(self, j, k, st: EdgeState):
        e = edge_index(self.P, j, k)
        self.s_marg[e] = st.s_marginal
        self.s_pair[e] = st.s_pairwise
        self.j_mean[e] = st.j_mean
        self.j_var[e] = st.j_var
        self.j_lag[e] = st.j_lag_cov
        self.alpha_shape[e] = st.alpha_shape
        self.alpha_rate[e] = st.alpha_rate

    def diag(self, j) -> DiagState:
        chain = GaussChainParams(self.k_prec_diag[j].copy(), self.k_prec_off[j].copy(),
                                 self.k_potential[j].copy())
        bel = GaussChainBeliefs(self.k_mean[j].copy(), self.k_var[j].copy(),
                                self.k_lag[j].copy(), float(self.k_logdet[j]))
        return DiagState(chain, bel, self.exp_pos[j].copy(), self.exp_neg[j].copy())

    def k_moments(self):
        """Stacked ``<K>`` (E, N; complex for frequency models) and
        ``<|K|^2>`` (E, N)."""
        k2 = self.s_marg * np.sum(self.j_mean ** 2 + self.j_var, axis=1)
        if self.n_comp == 1:
            km = self.s_marg * self.j_mean[:, 0]
        else:
            km = self.s_marg * (self.j_mean[:, 0] + 1j * self.j_mean[:, 1])
        return km, k2

    def precision_mean(self):
        """Posterior-mean precision trajectory, shape (N, P, P)."""
        km, _ = self.k_moments()
        out = np.zeros((self.N, self.P, self.P), dtype=km.dtype)
        jj, kk = self.pairs.T
        out[:, jj, kk] = km.T
        out[:, kk, jj] = km.T.conj() if np.iscomplexobj(km) else km.T
        idx = np.arange(self.P)
        out[:, idx, idx] = self.exp_pos.T
        return out

    def copy(self):
        kw = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, np.ndarray):
                v = v.copy()
            elif isinstance(v, HyperState):
                v = HyperState(**v.shapes())
            elif isinstance(v, dict):
                v = dict(v)
            kw[name] = v
        return VariationalModel(**kw)

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, np.ndarray):
                doc[name] = v.tolist()
            elif isinstance(v, HyperState):
                doc[name] = v.shapes()
            else:
                doc[name] = v
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_NAME:
            raise ValueError("not a model document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        kw = {}
        for name, f in cls.__dataclass_fields__.items():
            v = doc[name] if name in doc else {}
            if name == "hypers":
                v = HyperState(**v)
            elif name in ("P", "N"):
                v = int(v)
            elif name == "slab_anchor_var":
                v = float(doc.get(name, f.default))
            elif name not in ("domain", "flags"):
                v = np.asarray(v, dtype=float)
            kw[name] = v
        return cls(**kw)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def initial_model(values, mask, domain="time", eps=1e-3, slab_anchor_var=1.0):
    """Neutral starting point for a fit.

    ``<s> = 0.5``, ``<J> = 0`` with unit variance (split evenly over the real
    and imaginary parts of complex slabs), ``kappa`` centred at
    ``-log`` of the observed per-variable sample variance with variance
    0.1, Beta posteriors at ``(1, 1) + eps`` and smoothness rates set so
    that ``<alpha> = <beta> = 1``.
    """
    values = np.asarray(values)
    mask = np.asarray(mask, dtype=bool)
    n, p = values.shape
    if n < 2:
        raise ValueError("at least two covariate points are required")
    if p < 2:
        raise ValueError("at least two variables are required")
    ncomp = 1 if domain == "time" else 2
    e = p * (p - 1) // 2

    cnt = mask.sum(axis=0)
    if np.any(cnt == 0):
        raise ValueError("every variable needs at least one observed value")
    mean = np.where(mask, values, 0).sum(axis=0) / cnt
    svar = np.where(mask, np.abs(values - mean) ** 2, 0.0).sum(axis=0) / cnt
    svar = np.where(svar > 0, svar, 1.0)
    k0 = -np.log(svar)
    kvar0 = 0.1

    k_mean = np.repeat(k0[:, None], n, axis=1)
    k_var = np.full((p, n), kvar0)
    ep, en = lognormal_moments(k_mean, k_var)
    alpha_shape = ncomp * (n - 1) / 2.0
    beta_shape = p * (n - 1) / 2.0

    fill_mean = np.where(mask, 0.0, 0.0)
    fill_var = np.where(mask, 0.0, 1.0)

    return VariationalModel(
        P=p, N=n, domain=domain,
        s_marg=np.full((e, n), 0.5),
        s_pair=np.full((e, n - 1, 2, 2), 0.25),
        j_mean=np.zeros((e, ncomp, n)),
        j_var=np.full((e, ncomp, n), 1.0 / ncomp),
        j_lag=np.zeros((e, ncomp, n - 1)),
        j_logdet=np.full((e, ncomp), n * np.log(ncomp)),
        alpha_shape=np.full(e, alpha_shape),
        alpha_rate=np.full(e, alpha_shape),
        k_prec_diag=np.full((p, n), 1.0 / kvar0),
        k_prec_off=np.zeros((p, n - 1)),
        k_potential=k_mean / kvar0,
        k_mean=k_mean,
        k_var=k_var,
        k_lag=np.zeros((p, n - 1)),
        k_logdet=np.full(p, n * np.log(1.0 / kvar0)),
        exp_pos=ep, exp_neg=en,
        hypers=HyperState(1 + eps, 1 + eps, 1 + eps, 1 + eps, 1 + eps, 1 + eps,
                          beta_shape, beta_shape),
        x_fill_mean=fill_mean.astype(float),
        x_fill_var=fill_var.astype(float),
        slab_anchor_var=float(slab_anchor_var),
    )
