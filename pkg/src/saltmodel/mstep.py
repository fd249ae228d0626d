"""Weighted least-squares coordinate updates for SALT emission parameters.

Every update minimizes the expected negative log-likelihood

    1/2 sum_t w_t (y_t - b - A_(1) x_t)^T Sigma^{-1} (y_t - b - A_(1) x_t)

in one block of parameters with the others held fixed. ``x_t`` is the
row-major flattened lag window ``y_{t-1:t-L}`` (index ``q * L + l``).
The updates only touch the weighted moments in :class:`WeightedStats`, so
their cost does not depend on the series length.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .tensor import TuckerFactors, mode_n_matricize, superdiagonal

COV_JITTER = 1e-6
MIN_WEIGHT = 1e-8


class SingularGramWarning(RuntimeWarning):
    """A normal-equations solve was singular and fell back to least squares."""


@dataclass
class WeightedStats:
    """Weighted first and second moments of inputs ``x_t`` and outputs ``y_t``.

    Attributes:
        total: sum of weights.
        sx: (P,) weighted input sum, ``P = N * L``.
        sy: (N,) weighted output sum.
        sxx: (P, P) weighted input scatter.
        sxy: (P, N) weighted input/output cross scatter.
        syy: (N, N) weighted output scatter.
    """

    total: float
    sx: np.ndarray
    sy: np.ndarray
    sxx: np.ndarray
    sxy: np.ndarray
    syy: np.ndarray

    @classmethod
    def from_data(cls, X, Y, weights):
        """Moments of flattened inputs ``X`` (T, P) and outputs ``Y`` (T, N)."""
        w = np.asarray(weights, dtype=float)
        Xw = X * w[:, None]
        return cls(
            total=float(w.sum()),
            sx=Xw.sum(axis=0),
            sy=w @ Y,
            sxx=Xw.T @ X,
            sxy=Xw.T @ Y,
            syy=(Y * w[:, None]).T @ Y,
        )

    def centered(self, b):
        """Cross and output scatter of ``y_t - b``."""
        sxy = self.sxy - np.outer(self.sx, b)
        syy = (self.syy - np.outer(self.sy, b) - np.outer(b, self.sy)
               + self.total * np.outer(b, b))
        return sxy, syy


def solve_normal(gram, rhs, flags=None):
    """Solve ``gram @ x = rhs`` for symmetric PSD ``gram``.

    When the Cholesky factorization fails or is numerically singular, the
    minimum-norm least-squares solution is returned instead. Normal equations
    are always consistent, so that is still an exact minimizer of the
    underlying quadratic. ``flags`` (a list) records the condition estimate of
    each fallback.
    """
    gram = 0.5 * (gram + gram.T)
    try:
        c, low = sla.cho_factor(gram, lower=True, check_finite=False)
        diag = np.abs(np.diag(c))
        if diag.min() ** 2 > 1e-14 * diag.max() ** 2:
            return sla.cho_solve((c, low), rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(gram)
    keep = evals > evals.max() * gram.shape[0] * np.finfo(float).eps
    if flags is not None:
        flags.append(int(np.count_nonzero(~keep)))
    warnings.warn(f"singular normal equations ({np.count_nonzero(~keep)} null directions); "
                  "using the minimum-norm solution", SingularGramWarning, stacklevel=2)
    proj = evecs[:, keep]
    return proj @ ((proj.T @ rhs) / (evals[keep][:, None] if np.ndim(rhs) > 1 else evals[keep]))


def normalize_gauge(f, cp=False):
    """Rescale factors without changing the tensor they represent.

    Tucker factors are replaced by orthonormal bases with the triangular parts
    absorbed into the core; CP columns are scaled to unit norm with the scales
    moved onto the superdiagonal. Keeps the normal equations well conditioned.
    """
    if cp:
        norms = [np.linalg.norm(M, axis=0) for M in (f.U, f.V, f.W)]
        if any(np.any(n == 0) for n in norms):
            return f
        g = np.diagonal(np.diagonal(f.G)) * norms[0] * norms[1] * norms[2]
        return TuckerFactors.cp(f.U / norms[0], f.V / norms[1], f.W / norms[2], g)
    mats, Rs = [], []
    for M in (f.U, f.V, f.W):
        if M.shape[0] >= M.shape[1]:
            q, r = np.linalg.qr(M)
        else:
            # wide factor: a basis change cannot be orthonormal, only rescale columns
            n = np.linalg.norm(M, axis=0)
            n[n == 0] = 1.0
            q, r = M / n, np.diag(n)
        mats.append(q)
        Rs.append(r)
    G = np.einsum("ijk,ai,bj,ck->abc", f.G, *Rs, optimize=True)
    return TuckerFactors(*mats, G)


def _lag_tensor(stats, N, L):
    return stats.sxx.reshape(N, L, N, L)


def update_output(f, stats, b, flags=None):
    """Closed-form output factors ``U``."""
    N, _, L = f.shape
    K = np.kron(f.V, f.W)
    core = mode_n_matricize(f.G, 1)
    sxy, _ = stats.centered(b)
    zz = K.T @ stats.sxx @ K
    zy = K.T @ sxy
    gram = core @ zz @ core.T
    cross = core @ zy
    U = solve_normal(gram, cross, flags).T
    return TuckerFactors(U, f.V, f.W, f.G)


def update_core(f, stats, b, Sigma_inv, cp=False, flags=None):
    """Core tensor update; CP models only update the superdiagonal."""
    D1, D2, D3 = f.G.shape
    K = np.kron(f.V, f.W)
    sxy, _ = stats.centered(b)
    zz = K.T @ stats.sxx @ K
    zy = K.T @ sxy
    UtSi = f.U.T @ Sigma_inv
    gram = np.kron(UtSi @ f.U, zz)
    rhs = (UtSi @ zy.T).ravel()
    if cp:
        D = D1
        idx = np.arange(D) * (D * D + D + 1)
        g = solve_normal(gram[np.ix_(idx, idx)], rhs[idx], flags)
        G = superdiagonal(g)
    else:
        G = solve_normal(gram, rhs, flags).reshape(D1, D2, D3)
    return TuckerFactors(f.U, f.V, f.W, G)


def _mixing(f, Sigma_inv):
    M = f.U @ mode_n_matricize(f.G, 1)
    D1, D2, D3 = f.G.shape
    B = (M.T @ Sigma_inv @ M).reshape(D2, D3, D2, D3)
    return M, B


def update_input(f, stats, b, Sigma_inv, flags=None):
    """Input factor update, solved jointly in all entries of ``V``."""
    N, N2, L = f.shape
    D1, D2, D3 = f.G.shape
    M, B = _mixing(f, Sigma_inv)
    sxy, _ = stats.centered(b)
    sxx4 = _lag_tensor(stats, N2, L)
    # P_t = X_t W; moments of P_t in (q, k) layout
    spp = np.einsum("aibj,ik,jm->akbm", sxx4, f.W, f.W, optimize=True)
    spy = np.einsum("ain,ik->akn", sxy.reshape(N2, L, -1), f.W, optimize=True)
    gram = np.einsum("jkJK,qkQK->qjQJ", B, spp, optimize=True).reshape(N2 * D2, N2 * D2)
    SiM = (Sigma_inv @ M).reshape(-1, D2, D3)
    rhs = np.einsum("njk,qkn->qj", SiM, spy, optimize=True).ravel()
    V = solve_normal(gram, rhs, flags).reshape(N2, D2)
    return TuckerFactors(f.U, V, f.W, f.G)


def update_lag(f, stats, b, Sigma_inv, flags=None):
    """Lag factor update, solved jointly in all entries of ``W``."""
    N, N2, L = f.shape
    D1, D2, D3 = f.G.shape
    M, B = _mixing(f, Sigma_inv)
    sxy, _ = stats.centered(b)
    sxx4 = _lag_tensor(stats, N2, L)
    # Z_t = V^T X_t; moments of Z_t in (j, l) layout
    szz = np.einsum("aibj,ac,bd->cidj", sxx4, f.V, f.V, optimize=True)
    szy = np.einsum("ain,aj->jin", sxy.reshape(N2, L, -1), f.V, optimize=True)
    gram = np.einsum("jkJK,jlJL->lkLK", B, szz, optimize=True).reshape(L * D3, L * D3)
    SiM = (Sigma_inv @ M).reshape(-1, D2, D3)
    rhs = np.einsum("njk,jln->lk", SiM, szy, optimize=True).ravel()
    W = solve_normal(gram, rhs, flags).reshape(L, D3)
    return TuckerFactors(f.U, f.V, W, f.G)


def residual_moments(A1, b, stats):
    """Weighted residual sum and scatter of ``y_t - b - A1 x_t``."""
    r_sum = stats.sy - A1 @ stats.sx - stats.total * b
    AS = A1 @ stats.sxy
    scatter = stats.syy - AS - AS.T + A1 @ stats.sxx @ A1.T
    m = stats.sy - A1 @ stats.sx
    scatter = scatter - np.outer(m, b) - np.outer(b, m) + stats.total * np.outer(b, b)
    return r_sum, 0.5 * (scatter + scatter.T)


def update_bias_cov(A1, stats, jitter=COV_JITTER):
    """Bias and covariance given the regression matrix ``A1`` (N, N*L)."""
    N = A1.shape[0]
    b = (stats.sy - A1 @ stats.sx) / stats.total
    _, scatter = residual_moments(A1, b, stats)
    Sigma = scatter / stats.total + jitter * np.eye(N)
    return b, 0.5 * (Sigma + Sigma.T)


def expected_nll(A1, b, Sigma, stats):
    """Expected negative log-likelihood of one state's emissions."""
    N = len(b)
    _, scatter = residual_moments(A1, b, stats)
    c, low = sla.cho_factor(Sigma, lower=True)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    quad = np.trace(sla.cho_solve((c, low), scatter))
    return 0.5 * quad + 0.5 * stats.total * (logdet + N * np.log(2 * np.pi))
