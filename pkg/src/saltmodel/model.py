"""SALT parameters, emission likelihoods and derived quantities."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numpy.lib.stride_tricks import sliding_window_view

from .hmm import TransitionModel, forward_backward
from .tensor import ShapeError, is_superdiagonal, materialize, mode_n_matricize

MODES = ("cp", "tucker")


def lag_windows(y, L):
    """Lag windows ``X_t = [y_{t-1}, ..., y_{t-L}]`` for every scored frame.

    Args:
        y: (T, N) series.
        L: number of lags.

    Returns:
        (T - L, N, L) array whose column ``l`` holds ``y_{t-l-1}``, for
        ``t = L, ..., T - 1``. The first ``L`` frames are only conditioned on.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise ShapeError(f"series must be (T, N), got {y.shape}")
    T, N = y.shape
    if T <= L:
        raise ShapeError(f"series of length {T} is too short for {L} lags")
    win = sliding_window_view(y, L, axis=0)[:T - L]  # (T-L, N, L), oldest first
    return np.ascontiguousarray(win[:, :, ::-1])


def lag_design(y, L):
    """Flattened lag windows ``(T - L, N * L)`` and targets ``(T - L, N)``."""
    X = lag_windows(y, L)
    return X.reshape(len(X), -1), np.asarray(y, dtype=float)[L:]


@dataclass
class SaltParams:
    """Per-state factors, biases and covariances plus the Markov chain."""

    factors: list
    b: np.ndarray
    Sigma: np.ndarray
    tm: TransitionModel
    mode: str = "tucker"
    flags: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        H = len(self.factors)
        N, _, L = self.factors[0].shape
        if self.b.shape != (H, N) or self.Sigma.shape != (H, N, N):
            raise ShapeError("bias or covariance shape does not match the factors")
        if self.tm.num_states != H:
            raise ShapeError("transition model does not match the number of states")
        for f in self.factors:
            if f.shape != (N, N, L):
                raise ShapeError(f"factor shapes {f.shape} differ across states")
            if self.mode == "cp" and not is_superdiagonal(f.G):
                raise ShapeError("CP core tensors must be superdiagonal")

    @property
    def H(self):
        return len(self.factors)

    @property
    def N(self):
        return self.factors[0].shape[0]

    @property
    def L(self):
        return self.factors[0].shape[2]

    @property
    def D(self):
        return self.factors[0].G.shape[0]

    def tensors(self):
        """(H, N, N, L) stack of materialized autoregressive tensors."""
        return np.stack([materialize(f) for f in self.factors])

    def copy(self):
        return SaltParams([f.copy() for f in self.factors], self.b.copy(), self.Sigma.copy(),
                          TransitionModel(self.tm.pi.copy(), self.tm.init.copy()), self.mode)

    def permute(self, perm):
        perm = list(perm)
        return SaltParams([self.factors[h].copy() for h in perm], self.b[perm], self.Sigma[perm],
                          self.tm.permute(perm), self.mode)


def gaussian_log_density(resid, Sigma):
    """Row-wise log N(resid; 0, Sigma)."""
    N = Sigma.shape[0]
    try:
        chol = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("covariance is not positive definite") from exc
    z = sla.solve_triangular(chol, resid.T, lower=True, check_finite=False)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (N * np.log(2 * np.pi) + logdet + np.einsum("it,it->t", z, z))


def dense_log_likelihoods(tensors, b, Sigma, X, Y):
    """Per-frame, per-state log-densities for dense AR tensors.

    Args:
        tensors: (H, N, N, L) AR tensors.
        b: (H, N) biases.
        Sigma: (H, N, N) covariances.
        X: (T', N * L) flattened lag windows.
        Y: (T', N) targets.
    """
    H, N = b.shape
    out = np.empty((len(Y), H))
    for h in range(H):
        A1 = tensors[h].reshape(N, -1)
        out[:, h] = gaussian_log_density(Y - X @ A1.T - b[h], Sigma[h])
    return out


def emission_log_likelihoods(p, y):
    """(T - L, H) Gaussian log-densities of each scored frame under each state."""
    X, Y = lag_design(y, p.L)
    return dense_log_likelihoods(p.tensors(), p.b, p.Sigma, X, Y)


def e_step(p, y):
    return forward_backward(emission_log_likelihoods(p, y), p.tm)


def predictive_means(p, y):
    """(T - L, H, N) one-step predictive mean of every scored frame per state."""
    X, _ = lag_design(y, p.L)
    A = p.tensors().reshape(p.H, p.N, -1)
    return np.einsum("hnp,tp->thn", A, X) + p.b[None]


def latent_trajectory(p, y, path):
    """Low-dimensional continuous states ``x_t = G_(1) vec(V^T X_t W)``.

    ``path`` gives the active state of each scored frame (length ``T - L``).
    ``U^(h) x_t + b^(h)`` is the predictive mean of frame ``t``.
    """
    Xw = lag_windows(y, p.L)
    path = np.asarray(path, dtype=int)
    if path.shape != (len(Xw),):
        raise ShapeError(f"path has length {len(path)}, expected {len(Xw)}")
    if path.min(initial=0) < 0 or path.max(initial=0) >= p.H:
        raise ShapeError("path contains an invalid state index")
    out = np.empty((len(Xw), p.D))
    for h in np.unique(path):
        f = p.factors[h]
        sel = path == h
        inner = np.einsum("qj,tql,lk->tjk", f.V, Xw[sel], f.W).reshape(sel.sum(), -1)
        out[sel] = inner @ mode_n_matricize(f.G, 1).T
    return out


def ar_filter(p, h, pq):
    """Length-L filter ``sum_ijk g_ijk u_pi v_qj w_:k`` from input q to output p."""
    if not 0 <= h < p.H:
        raise IndexError(f"state {h} out of range for {p.H} states")
    i, j = pq
    if not (0 <= i < p.N and 0 <= j < p.N):
        raise IndexError(f"pair {pq} out of range for {p.N} channels")
    f = p.factors[h]
    return np.einsum("ijk,i,j,lk->l", f.G, f.U[i], f.V[j], f.W)
