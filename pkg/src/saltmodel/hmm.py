"""Exact inference for discrete-state Markov chains.

Viterbi and the reference forward-backward run in log space. The default
forward-backward uses a max-shifted, per-step normalized recursion and falls
back to log space whenever that loses range, so sequences of tens of
thousands of steps are safe.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


class InputError(ValueError):
    """Raised for malformed likelihood or transition inputs."""


@dataclass
class TransitionModel:
    pi: np.ndarray
    init: np.ndarray

    def __post_init__(self):
        self.pi = np.atleast_2d(np.asarray(self.pi, dtype=float))
        self.init = np.asarray(self.init, dtype=float).ravel()
        H = len(self.init)
        if self.pi.shape != (H, H):
            raise InputError(f"transition matrix {self.pi.shape} does not match {H} states")
        if np.any(self.pi < 0) or not np.allclose(self.pi.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise InputError("transition rows must be non-negative and sum to 1")
        if np.any(self.init < 0) or abs(self.init.sum() - 1.0) > 1e-12:
            raise InputError("initial distribution must be non-negative and sum to 1")

    @property
    def num_states(self):
        return len(self.init)

    @classmethod
    def uniform(cls, H, stickiness=0.0):
        """Uniform chain, optionally with extra mass ``stickiness`` on the diagonal."""
        pi = np.full((H, H), (1.0 - stickiness) / H) + stickiness * np.eye(H)
        return cls(pi / pi.sum(axis=1, keepdims=True), np.full(H, 1.0 / H))

    def permute(self, perm):
        perm = np.asarray(perm)
        return TransitionModel(self.pi[np.ix_(perm, perm)], self.init[perm])


@dataclass
class DirichletPrior:
    """Row-wise Dirichlet prior on the transition matrix.

    ``diag`` and ``offdiag`` are the concentrations on self- and cross-
    transitions. ``(1, 1)`` is flat and yields the maximum-likelihood update.
    """

    diag: float = 1.0
    offdiag: float = 1.0

    def __post_init__(self):
        if self.diag < 1 or self.offdiag < 1:
            raise InputError("Dirichlet concentrations must be >= 1")

    @property
    def is_flat(self):
        return self.diag == 1.0 and self.offdiag == 1.0

    def concentration(self, H):
        return np.full((H, H), float(self.offdiag)) + (self.diag - self.offdiag) * np.eye(H)

    def log_density(self, pi):
        """Unnormalized log prior density of ``pi``."""
        alpha = self.concentration(pi.shape[0])
        with np.errstate(divide="ignore"):
            terms = np.where(alpha > 1, (alpha - 1) * np.log(pi), 0.0)
        return float(terms.sum())


@dataclass
class HmmPosterior:
    """Smoothed posterior over a state sequence.

    Attributes:
        omega: (T, H) marginals p(z_t | y_{1:T}).
        xi: (T-1, H, H) pairwise marginals p(z_t, z_{t+1} | y_{1:T}).
        log_marginal: log p(y_{1:T}).
        predicted: (T, H) one-step-ahead state probabilities p(z_t | y_{<t}).
    """

    omega: np.ndarray
    xi: np.ndarray
    log_marginal: float
    predicted: np.ndarray = None


def _check(log_lik, tm):
    log_lik = np.atleast_2d(np.asarray(log_lik, dtype=float))
    if log_lik.shape[0] < 1:
        raise InputError("need at least one time step")
    if log_lik.shape[1] != tm.num_states:
        raise InputError(f"log_lik has {log_lik.shape[1]} states, chain has {tm.num_states}")
    if not np.all(np.isfinite(log_lik)):
        raise InputError("log_lik contains non-finite entries")
    return log_lik


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def forward_backward(log_lik, tm):
    """Exact smoothing for an HMM with per-step emission log-likelihoods.

    Emissions are shifted by their per-step maximum before exponentiating and
    the filtered distribution is renormalized every step. If any step still
    under- or overflows, the whole pass is redone in log space.
    """
    log_lik = _check(log_lik, tm)
    T, H = log_lik.shape
    if H == 1:
        ones = np.ones((T, 1))
        return HmmPosterior(ones, np.ones((T - 1, 1, 1)), float(log_lik.sum()), ones.copy())
    with np.errstate(all="ignore"):
        post = _forward_backward_scaled(log_lik, tm)
    return post if post is not None else forward_backward_log(log_lik, tm)


def _forward_backward_scaled(log_lik, tm):
    T, H = log_lik.shape
    pi = tm.pi
    shift = log_lik.max(axis=1)
    lik = np.exp(log_lik - shift[:, None])

    # alpha[t] = p(z_t | y_{1:t}); log p(y_t | y_{<t}) = log(scale[t]) + shift[t]
    alpha = np.empty((T, H))
    pred = np.empty((T, H))
    scale = np.empty(T)
    for t in range(T):
        pred[t] = tm.init if t == 0 else alpha[t - 1] @ pi
        a = pred[t] * lik[t]
        scale[t] = a.sum()
        if not 0 < scale[t] < np.inf:
            return None
        alpha[t] = a / scale[t]

    beta = np.ones((T, H))
    for t in range(T - 2, -1, -1):
        beta[t] = pi @ (lik[t + 1] * beta[t + 1]) / scale[t + 1]
    if not np.all(np.isfinite(beta)):
        return None

    omega = alpha * beta
    omega /= omega.sum(axis=1, keepdims=True)
    if T > 1:
        xi = alpha[:-1, :, None] * pi[None] * (lik[1:] * beta[1:])[:, None, :]
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    else:
        xi = np.zeros((0, H, H))
    pred /= pred.sum(axis=1, keepdims=True)
    log_marginal = float(np.log(scale).sum() + shift.sum())
    return HmmPosterior(omega, xi, log_marginal, pred)


def forward_backward_log(log_lik, tm):
    """Forward-backward carried out entirely in log space.

    Slower than :func:`forward_backward` but immune to any dynamic range.
    """
    log_lik = _check(log_lik, tm)
    T, H = log_lik.shape
    log_pi = _log(tm.pi)

    log_alpha = np.empty((T, H))
    log_pred = np.empty((T, H))
    norms = np.empty(T)
    log_pred[0] = _log(tm.init)
    for t in range(T):
        if t > 0:
            log_pred[t] = logsumexp(log_alpha[t - 1][:, None] + log_pi, axis=0)
        a = log_pred[t] + log_lik[t]
        norms[t] = logsumexp(a)
        if not np.isfinite(norms[t]):
            raise InputError(f"observations have zero probability at step {t}")
        log_alpha[t] = a - norms[t]

    log_beta = np.zeros((T, H))
    for t in range(T - 2, -1, -1):
        b = logsumexp(log_pi + (log_lik[t + 1] + log_beta[t + 1])[None, :], axis=1)
        log_beta[t] = b - norms[t + 1]

    log_omega = log_alpha + log_beta
    omega = np.exp(log_omega - logsumexp(log_omega, axis=1, keepdims=True))
    if T > 1:
        log_xi = (log_alpha[:-1, :, None] + log_pi[None]
                  + (log_lik[1:] + log_beta[1:])[:, None, :])
        xi = np.exp(log_xi - logsumexp(log_xi, axis=(1, 2), keepdims=True))
    else:
        xi = np.zeros((0, H, H))
    predicted = np.exp(log_pred - logsumexp(log_pred, axis=1, keepdims=True))
    return HmmPosterior(omega, xi, float(norms.sum()), predicted)


def viterbi(log_lik, tm):
    """Most probable state path; ties go to the lowest state index."""
    log_lik = _check(log_lik, tm)
    T, H = log_lik.shape
    log_pi = _log(tm.pi)

    score = _log(tm.init) + log_lik[0]
    back = np.zeros((T, H), dtype=int)
    for t in range(1, T):
        cand = score[:, None] + log_pi
        # argmax returns the first maximizer, i.e. the lowest index on ties
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(H)] + log_lik[t]

    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(score))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_log_prob(path, log_lik, tm):
    """Joint log-probability of a state path and the observations."""
    log_lik = _check(log_lik, tm)
    path = np.asarray(path, dtype=int)
    lp = _log(tm.init[path[0]]) + log_lik[0, path[0]]
    for t in range(1, len(path)):
        lp += _log(tm.pi[path[t - 1], path[t]]) + log_lik[t, path[t]]
    return float(lp)


def update_transitions(xi, omega0, prior=None):
    """MAP transition update from expected transition counts.

    ``pi[h, k]`` is proportional to ``sum_t xi[t, h, k] + alpha_hk - 1``.
    The initial distribution is proportional to ``omega0`` (flat prior).
    Rows without any mass are left uniform.
    """
    prior = prior or DirichletPrior()
    xi = np.asarray(xi, dtype=float)
    omega0 = np.asarray(omega0, dtype=float)
    H = len(omega0)
    counts = xi.sum(axis=0) if len(xi) else np.zeros((H, H))
    counts = counts + prior.concentration(H) - 1.0
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals <= 0) and H > 1 and not prior.is_flat:
        raise FloatingPointError("transition row has no mass after adding the prior")
    pi = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / H)
    init = omega0 / omega0.sum()
    return TransitionModel(pi, init)
