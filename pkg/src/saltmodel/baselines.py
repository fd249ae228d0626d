"""Full-tensor ARHMM baseline and parameter accounting."""

from dataclasses import dataclass, field

import numpy as np

from . import mstep
from .fit import _kmeans_labels, _cov, _ols_var, run_em
from .hmm import TransitionModel, update_transitions
from .model import dense_log_likelihoods, lag_design
from .tensor import ShapeError


@dataclass
class ArhmmParams:
    """Unconstrained per-state AR tensors ``(H, N, N, L)`` with biases and covariances."""

    A: np.ndarray
    b: np.ndarray
    Sigma: np.ndarray
    tm: TransitionModel
    flags: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        H, N, N2, L = self.A.shape
        if N != N2 or self.b.shape != (H, N) or self.Sigma.shape != (H, N, N):
            raise ShapeError("inconsistent ARHMM parameter shapes")
        if self.tm.num_states != H:
            raise ShapeError("transition model does not match the number of states")

    @property
    def H(self):
        return self.A.shape[0]

    @property
    def N(self):
        return self.A.shape[1]

    @property
    def L(self):
        return self.A.shape[3]

    def tensors(self):
        return self.A

    def copy(self):
        return ArhmmParams(self.A.copy(), self.b.copy(), self.Sigma.copy(),
                           TransitionModel(self.tm.pi.copy(), self.tm.init.copy()))

    def permute(self, perm):
        perm = list(perm)
        return ArhmmParams(self.A[perm], self.b[perm], self.Sigma[perm], self.tm.permute(perm))


def regress_state(stats, flags=None):
    """Weighted OLS of outputs on ``[x_t, 1]`` from moments; returns ``(A1, b)``."""
    P = len(stats.sx)
    gram = np.empty((P + 1, P + 1))
    gram[:P, :P] = stats.sxx
    gram[:P, P] = gram[P, :P] = stats.sx
    gram[P, P] = stats.total
    rhs = np.vstack([stats.sxy, stats.sy[None]])
    coef = mstep.solve_normal(gram, rhs, flags)
    return coef[:P].T, coef[P]


def arhmm_m_step(p, post, stats, prior=None):
    tm = update_transitions(post.xi, post.omega[0], prior)
    A, b, Sigma = p.A.copy(), p.b.copy(), p.Sigma.copy()
    flags = []
    for h in range(p.H):
        if stats[h].total < mstep.MIN_WEIGHT:
            continue
        A1, _ = regress_state(stats[h], flags)
        A[h] = A1.reshape(p.N, p.N, p.L)
        b[h], Sigma[h] = mstep.update_bias_cov(A1, stats[h])
    out = ArhmmParams(A, b, Sigma, tm)
    out.flags = flags
    return out


def initialize_arhmm(y, cfg):
    X, Y = lag_design(y, cfg.L)
    T, N = Y.shape
    H, L = cfg.H, cfg.L
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "random":
        A = rng.normal(scale=1.0 / (N * L), size=(H, N, N, L))
        b = np.tile(Y.mean(axis=0), (H, 1))
        Sigma = np.tile(_cov(Y), (H, 1, 1))
        return ArhmmParams(A, b, Sigma, TransitionModel.uniform(H, 0.9 if H > 1 else 0.0))
    labels = _kmeans_labels(X, H, rng)
    A, bs, Sigmas = [], [], []
    for h in range(H):
        sel = labels == h
        A1, b = _ols_var(X[sel], Y[sel])
        A.append(A1.reshape(N, N, L))
        bs.append(b)
        Sigmas.append(_cov(Y[sel] - X[sel] @ A1.T - b))
    counts = np.ones((H, H)) + 10.0 * np.eye(H)
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    tm = TransitionModel(counts / counts.sum(axis=1, keepdims=True), np.full(H, 1.0 / H))
    return ArhmmParams(np.array(A), np.array(bs), np.array(Sigmas), tm)


def fit_arhmm(y, cfg, init_params=None, callback=None):
    """Fit the full-tensor ARHMM by EM with exact weighted-OLS M-steps."""
    y = np.asarray(y, dtype=float)
    if len(y) <= cfg.L + 1:
        raise ValueError(f"need more than L + 1 = {cfg.L + 1} time steps, got {len(y)}")
    X, Y = lag_design(y, cfg.L)
    params = init_params.copy() if init_params is not None else initialize_arhmm(y, cfg)

    def log_lik(p):
        return dense_log_likelihoods(p.A, p.b, p.Sigma, X, Y)

    def step(p, post, stats):
        return arhmm_m_step(p, post, stats, cfg.prior)

    return run_em(X, Y, params, log_lik, step, cfg, callback)


def param_count(kind, H, N, L, D=None):
    """Number of AR parameters, excluding covariances.

    ARHMM: ``H N^2 L``; CP-SALT: ``H (2ND + LD + D)``; Tucker-SALT:
    ``H (2ND + LD + D^3)``; SLDS: ``H D^2 + N D``. Biases are not counted.
    """
    kind = kind.lower()
    if kind == "arhmm":
        return H * N * N * L
    if D is None:
        raise ValueError(f"{kind} parameter count needs a rank D")
    if kind in ("cp", "cp-salt"):
        return H * (2 * N * D + L * D + D)
    if kind in ("tucker", "tucker-salt"):
        return H * (2 * N * D + L * D + D ** 3)
    if kind == "slds":
        return H * D * D + N * D
    raise ValueError(f"unknown model kind {kind!r}")
