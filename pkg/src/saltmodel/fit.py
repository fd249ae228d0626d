"""Expectation-maximization for SALT models."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from . import mstep
from .hmm import DirichletPrior, HmmPosterior, TransitionModel, forward_backward, update_transitions
from .model import SaltParams, dense_log_likelihoods, lag_design
from .tensor import TuckerFactors, materialize, mode_n_matricize, superdiagonal

INIT_SWEEPS = 10

logger = logging.getLogger(__name__)


@dataclass
class FitConfig:
    H: int = 1
    D: int = 2
    L: int = 1
    mode: str = "tucker"
    max_iters: int = 100
    rel_tol: float = 1e-7
    seed: int = 0
    init: str = "kmeans"
    prior: DirichletPrior = field(default_factory=DirichletPrior)
    inner_sweeps: int = 1

    def __post_init__(self):
        if min(self.H, self.D, self.L) < 1:
            raise ValueError("H, D and L must be positive")
        if self.max_iters < 1 or self.rel_tol < 0:
            raise ValueError("max_iters must be >= 1 and rel_tol >= 0")
        if self.init not in ("kmeans", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.mode not in ("cp", "tucker"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class FitTrace:
    """Per-iteration marginal log-likelihoods of an EM run.

    ``loglik[i]`` is evaluated at the parameters after ``i`` M-steps.
    ``log_prior`` holds the matching transition log prior, which is zero
    under the flat prior; EM is monotone in their sum.
    """

    loglik: list = field(default_factory=list)
    log_prior: list = field(default_factory=list)
    posterior: HmmPosterior = None
    converged: bool = False
    singular_solves: int = 0

    @property
    def objective(self):
        return np.asarray(self.loglik) + np.asarray(self.log_prior)

    def is_monotone(self, rel_slack=1e-6):
        obj = self.objective
        if len(obj) < 2:
            return True
        drops = obj[:-1] - obj[1:]
        return bool(np.all(drops <= rel_slack * np.abs(obj[:-1])))


class FitError(RuntimeError):
    """Numerical failure during fitting, tagged with the iteration."""

    def __init__(self, iteration, cause):
        super().__init__(f"EM failed at iteration {iteration}: {cause}")
        self.iteration = iteration


class _StatsCache:
    """Reuses weighted moments while the state weights are unchanged."""

    def __init__(self, X, Y):
        self.X, self.Y = X, Y
        self._weights = None
        self._stats = None

    def __call__(self, omega):
        if self._weights is None or not np.array_equal(omega, self._weights):
            self._weights = omega.copy()
            self._stats = [mstep.WeightedStats.from_data(self.X, self.Y, omega[:, h])
                           for h in range(omega.shape[1])]
        return self._stats


def _inv_spd(S):
    c = np.linalg.cholesky(S)
    ci = np.linalg.inv(c)
    return ci.T @ ci


def sweep_state(f, b, Sigma, stats, cp, sweeps=1, flags=None):
    """One block-coordinate pass for a single state: U, G, V, W, then b and Sigma."""
    if stats.total < mstep.MIN_WEIGHT:
        return f, b, Sigma
    Si = _inv_spd(Sigma)
    for _ in range(sweeps):
        f = mstep.normalize_gauge(f, cp)
        f = mstep.update_output(f, stats, b, flags)
        f = mstep.update_core(f, stats, b, Si, cp=cp, flags=flags)
        f = mstep.update_input(f, stats, b, Si, flags)
        f = mstep.update_lag(f, stats, b, Si, flags)
    A1 = mode_n_matricize(materialize(f), 1)
    b, Sigma = mstep.update_bias_cov(A1, stats)
    return f, b, Sigma


def m_step(p, post, stats, prior=None, sweeps=1):
    """Full M-step: transitions, then every state's emission parameters."""
    tm = update_transitions(post.xi, post.omega[0], prior)
    flags = []
    factors, bs, Sigmas = [], [], []
    for h in range(p.H):
        f, b, S = sweep_state(p.factors[h], p.b[h], p.Sigma[h], stats[h],
                              cp=p.mode == "cp", sweeps=sweeps, flags=flags)
        factors.append(f)
        bs.append(b)
        Sigmas.append(S)
    out = SaltParams(factors, np.array(bs), np.array(Sigmas), tm, p.mode)
    out.flags = flags
    return out


# Single-block updates with the public (params, series, posterior) signature.

def _state_stats(p, y, post):
    X, Y = lag_design(y, p.L)
    return [mstep.WeightedStats.from_data(X, Y, post.omega[:, h]) for h in range(p.H)]


def _apply(p, y, post, update):
    stats = _state_stats(p, y, post)
    out = []
    for h in range(p.H):
        if stats[h].total < mstep.MIN_WEIGHT:
            out.append(p.factors[h])
        else:
            out.append(update(p.factors[h], stats[h], p.b[h], _inv_spd(p.Sigma[h])))
    return out


def m_step_output(p, y, post):
    return [f.U for f in _apply(p, y, post, lambda f, s, b, Si: mstep.update_output(f, s, b))]


def m_step_core(p, y, post):
    cp = p.mode == "cp"
    return [f.G for f in _apply(p, y, post, lambda f, s, b, Si: mstep.update_core(f, s, b, Si, cp=cp))]


def m_step_input(p, y, post):
    return [f.V for f in _apply(p, y, post, mstep.update_input)]


def m_step_lag(p, y, post):
    return [f.W for f in _apply(p, y, post, mstep.update_lag)]


def m_step_bias_cov(p, y, post):
    """Updated ``(b, Sigma)`` per state; degenerate states keep their values."""
    stats = _state_stats(p, y, post)
    out = []
    for h in range(p.H):
        if stats[h].total < mstep.MIN_WEIGHT:
            out.append((p.b[h].copy(), p.Sigma[h].copy()))
        else:
            A1 = mode_n_matricize(materialize(p.factors[h]), 1)
            out.append(mstep.update_bias_cov(A1, stats[h]))
    return out


# Initialization

def _pad_columns(mat, D, rng):
    if mat.shape[1] >= D:
        return mat[:, :D]
    extra = rng.normal(scale=1.0 / np.sqrt(mat.shape[0]), size=(mat.shape[0], D - mat.shape[1]))
    return np.hstack([mat, extra])


def hosvd(A, D, rng):
    """Truncated higher-order SVD of ``A`` to rank ``(D, D, D)``."""
    mats = []
    for n in (1, 2, 3):
        u, _, _ = np.linalg.svd(mode_n_matricize(A, n), full_matrices=False)
        mats.append(_pad_columns(u, D, rng))
    U, V, W = mats
    G = np.einsum("pql,pi,qj,lk->ijk", A, U, V, W)
    return TuckerFactors(U, V, W, G)


def cp_als(A, D, rng, iters=50):
    """Rank-``D`` CP approximation by alternating least squares."""
    N1, N2, N3 = A.shape
    U = rng.normal(size=(N1, D))
    V = rng.normal(size=(N2, D))
    W = rng.normal(size=(N3, D))
    A1 = mode_n_matricize(A, 1)
    A2 = mode_n_matricize(A, 2)
    A3 = mode_n_matricize(A, 3)

    def krp(P, Q):
        return np.einsum("ir,jr->ijr", P, Q).reshape(-1, P.shape[1])

    ridge = 1e-10 * np.eye(D)
    for _ in range(iters):
        U = A1 @ krp(V, W) @ np.linalg.inv((V.T @ V) * (W.T @ W) + ridge)
        V = A2 @ krp(U, W) @ np.linalg.inv((U.T @ U) * (W.T @ W) + ridge)
        W = A3 @ krp(U, V) @ np.linalg.inv((U.T @ U) * (V.T @ V) + ridge)
    scales = [np.linalg.norm(M, axis=0) + 1e-300 for M in (U, V, W)]
    weights = scales[0] * scales[1] * scales[2]
    return TuckerFactors.cp(U / scales[0], V / scales[1], W / scales[2], weights)


def _ols_var(X, Y, ridge=1e-6):
    """Least squares ``Y ~ X A^T + b`` with a small ridge on ``A``."""
    T, P = X.shape
    Z = np.hstack([X, np.ones((T, 1))])
    gram = Z.T @ Z
    reg = ridge * max(np.trace(gram[:P, :P]) / max(P, 1), 1.0) * np.eye(P + 1)
    reg[-1, -1] = 0.0
    coef = np.linalg.solve(gram + reg, Z.T @ Y)
    return coef[:P].T, coef[P]


def _cov(R, jitter=mstep.COV_JITTER):
    N = R.shape[1]
    if len(R) < 2:
        return np.eye(N)
    S = np.atleast_2d(np.cov(R, rowvar=False, bias=True))
    return 0.5 * (S + S.T) + jitter * np.eye(N)


def initialize(y, cfg):
    """Initial parameters from ``cfg.init`` ('random' or 'kmeans')."""
    X, Y = lag_design(y, cfg.L)
    T, N = Y.shape
    H, D, L = cfg.H, cfg.D, cfg.L
    rng = np.random.default_rng(cfg.seed)
    cp = cfg.mode == "cp"

    if cfg.init == "random":
        factors = []
        for _ in range(H):
            U = rng.normal(scale=1.0 / np.sqrt(N * D), size=(N, D))
            V = rng.normal(scale=1.0 / np.sqrt(N * D), size=(N, D))
            W = rng.normal(scale=1.0 / np.sqrt(L * D), size=(L, D))
            G = superdiagonal(rng.normal(size=D)) if cp else rng.normal(size=(D, D, D))
            factors.append(TuckerFactors(U, V, W, G))
        b = np.tile(Y.mean(axis=0), (H, 1))
        Sigma = np.tile(_cov(Y), (H, 1, 1))
        tm = TransitionModel.uniform(H, stickiness=0.9 if H > 1 else 0.0)
        return SaltParams(factors, b, Sigma, tm, cfg.mode)

    labels = _kmeans_labels(X, H, rng)
    factors, bs, Sigmas = [], [], []
    for h in range(H):
        sel = labels == h
        A1, _ = _ols_var(X[sel], Y[sel])
        A = A1.reshape(N, N, L)
        f = cp_als(A, D, rng) if cp else hosvd(A, D, rng)
        # the truncated OLS tensor is only a seed; refine it on the cluster's own frames
        stats = mstep.WeightedStats.from_data(X, Y, sel.astype(float))
        b, S = mstep.update_bias_cov(mode_n_matricize(materialize(f), 1), stats)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", mstep.SingularGramWarning)
            f, b, S = sweep_state(f, b, S, stats, cp, sweeps=INIT_SWEEPS)
        factors.append(f)
        bs.append(b)
        Sigmas.append(S)
    counts = np.ones((H, H)) + 10.0 * np.eye(H)
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    pi = counts / counts.sum(axis=1, keepdims=True)
    tm = TransitionModel(pi, np.full(H, 1.0 / H))
    return SaltParams(factors, np.array(bs), np.array(Sigmas), tm, cfg.mode)


def _kmeans_labels(X, H, rng):
    if H == 1:
        return np.zeros(len(X), dtype=int)
    km = KMeans(n_clusters=H, n_init=10, random_state=int(rng.integers(2**31 - 1)))
    labels = km.fit_predict(X)
    # keep every cluster non-empty for the per-cluster regressions
    for h in range(H):
        if not np.any(labels == h):
            labels[rng.integers(len(labels))] = h
    return labels


def run_em(X, Y, params, log_lik_fn, m_step_fn, cfg, callback=None):
    """Generic EM loop shared by SALT and the full-tensor ARHMM.

    Args:
        X, Y: flattened lag design and targets.
        params: initial parameters (anything with a ``tm`` attribute).
        log_lik_fn: params -> (T', H) emission log-likelihoods.
        m_step_fn: (params, posterior, stats) -> new params.
        cfg: a :class:`FitConfig`.
    """
    cache = _StatsCache(X, Y)
    trace = FitTrace()
    for it in range(cfg.max_iters + 1):
        try:
            post = forward_backward(log_lik_fn(params), params.tm)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            raise FitError(it, exc) from exc
        trace.loglik.append(post.log_marginal)
        trace.log_prior.append(cfg.prior.log_density(params.tm.pi) if not cfg.prior.is_flat else 0.0)
        trace.posterior = post
        if callback is not None:
            callback(it, params, post)
        obj = trace.objective
        if it > 0 and obj[-1] - obj[-2] <= cfg.rel_tol * abs(obj[-2]):
            trace.converged = True
            break
        if it == cfg.max_iters:
            break
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", mstep.SingularGramWarning)
                params = m_step_fn(params, post, cache(post.omega))
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            raise FitError(it, exc) from exc
        trace.singular_solves += len(getattr(params, "flags", []))
    logger.debug("EM stopped after %d iterations, loglik %.6f", len(trace.loglik) - 1, trace.loglik[-1])
    return params, trace


def fit_em(y, cfg, init_params=None, callback=None):
    """Fit a SALT model by EM.

    Args:
        y: (T, N) observations, ``T > L + 1``.
        cfg: fitting configuration.
        init_params: optional starting parameters, overriding ``cfg.init``.
        callback: optional ``f(iteration, params, posterior)``.

    Returns:
        ``(params, trace)``.
    """
    y = np.asarray(y, dtype=float)
    if len(y) <= cfg.L + 1:
        raise ValueError(f"need more than L + 1 = {cfg.L + 1} time steps, got {len(y)}")
    X, Y = lag_design(y, cfg.L)
    params = init_params.copy() if init_params is not None else initialize(y, cfg)

    def log_lik(p):
        return dense_log_likelihoods(p.tensors(), p.b, p.Sigma, X, Y)

    def step(p, post, stats):
        return m_step(p, post, stats, cfg.prior, cfg.inner_sweeps)

    return run_em(X, Y, params, log_lik, step, cfg, callback)
