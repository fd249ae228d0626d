"""Linear dynamical systems and their low-rank tensor autoregressive form.

The steady-state Kalman predictor of a stable LDS is

    E[y_t | y_<t] = C sum_{l>=1} Gamma^(l-1) (A K y_{t-l} + b - A K d) + d,

with ``Gamma = A (I - K C)``. Truncating the sum at ``L`` lags gives a tensor
autoregression whose Tucker rank is ``n + 2m`` and CP rank ``n + 3m``, where
``Gamma`` has ``n`` real eigenvalues and ``m`` complex-conjugate pairs.
Lag slices are indexed so that lag ``l`` (1-based) carries ``Gamma^(l-1)``.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .hmm import TransitionModel
from .model import SaltParams, gaussian_log_density
from .tensor import TuckerFactors, superdiagonal

logger = logging.getLogger(__name__)

DARE_TOL = 1e-12
DARE_MAX_ITERS = 100_000


class UnstableSystemError(ValueError):
    """The dynamics matrix (or Gamma) has spectral radius >= 1."""


class RiccatiConvergenceError(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(f"Riccati iteration did not converge in {iterations} steps "
                         f"(last change {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class DefectiveMatrixError(np.linalg.LinAlgError):
    """Real modal form failed to reconstruct the matrix (non-diagonalizable)."""


@dataclass
class LdsParams:
    A: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    d: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.d = np.asarray(self.d, dtype=float).ravel()
        D, N = self.latent_dim, self.obs_dim
        shapes = {"A": (D, D), "b": (D,), "Q": (D, D), "C": (N, D), "d": (N,), "R": (N, N)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def latent_dim(self):
        return self.A.shape[0]

    @property
    def obs_dim(self):
        return self.C.shape[0]

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    @property
    def is_stable(self):
        return self.spectral_radius < 1.0


@dataclass
class SteadyState:
    Sigma_pred: np.ndarray
    K: np.ndarray
    Gamma: np.ndarray
    lambda_max: float
    iterations: int = 0


@dataclass
class ModalForm:
    n_real: int
    n_complex_pairs: int
    E: np.ndarray
    Lambda: np.ndarray

    @property
    def E_inv(self):
        return np.linalg.inv(self.E)

    def block_eigenvalues(self):
        """Real eigenvalues followed by ``sigma + i omega`` of each pair."""
        n = self.n_real
        lam = [complex(self.Lambda[k, k]) for k in range(n)]
        for i in range(self.n_complex_pairs):
            p = n + 2 * i
            lam.append(complex(self.Lambda[p, p], self.Lambda[p, p + 1]))
        return np.array(lam)


def stationary_moments(p):
    """Stationary mean and covariance of the latent state of a stable LDS."""
    D = p.latent_dim
    mean = np.linalg.solve(np.eye(D) - p.A, p.b)
    cov = sla.solve_discrete_lyapunov(p.A, p.Q)
    return mean, 0.5 * (cov + cov.T)


def simulate_lds(p, T, seed, return_latent=False):
    """Sample ``T`` observations from the LDS.

    ``x_0`` is drawn from the stationary distribution when ``A`` is stable,
    otherwise from ``N(0, Q)``; ``y_1`` is emitted from ``x_1 = A x_0 + b + eps``.
    Random draws come from numpy's PCG64 generator seeded with ``seed``.
    """
    rng = np.random.default_rng(seed)
    D = p.latent_dim
    if p.is_stable:
        mean, cov = stationary_moments(p)
    else:
        warnings.warn("simulating an unstable LDS", RuntimeWarning, stacklevel=2)
        mean, cov = np.zeros(D), p.Q
    x0 = mean + np.linalg.cholesky(cov) @ rng.standard_normal(D)
    x, y = _rollout([p.A], [p.b], [p.Q], p.C, p.d, p.R, np.zeros(T, dtype=int), x0, rng)
    return (y, x) if return_latent else y


def _rollout(As, bs, Qs, C, d, R, states, x0, rng):
    """Shared sampler for single and switching LDSs."""
    T = len(states)
    D, N = len(x0), C.shape[0]
    eps = rng.standard_normal((T, D))
    delta = rng.standard_normal((T, N))
    chol_Q = [np.linalg.cholesky(Q) for Q in Qs]
    chol_R = np.linalg.cholesky(R)
    x = np.empty((T, D))
    prev = x0
    for t, h in enumerate(states):
        prev = As[h] @ prev + bs[h] + chol_Q[h] @ eps[t]
        x[t] = prev
    y = x @ C.T + d + delta @ chol_R.T
    return x, y


def dare_residual(p, Sigma):
    A, C, Q, R = p.A, p.C, p.Q, p.R
    S = C @ Sigma @ C.T + R
    rhs = A @ Sigma @ A.T - A @ Sigma @ C.T @ np.linalg.solve(S, C @ Sigma @ A.T) + Q
    return float(np.max(np.abs(rhs - Sigma)))


def solve_dare(p, tol=DARE_TOL, max_iters=DARE_MAX_ITERS):
    """Steady predictive covariance by iterating the Riccati recursion from ``Q``."""
    if not p.is_stable:
        raise UnstableSystemError(f"spectral radius of A is {p.spectral_radius:.6g}")
    A, C, Q, R = p.A, p.C, p.Q, p.R
    Sigma = Q.copy()
    change = np.inf
    for it in range(1, max_iters + 1):
        S = C @ Sigma @ C.T + R
        gain = A @ Sigma @ C.T
        new = A @ Sigma @ A.T - gain @ np.linalg.solve(S, gain.T) + Q
        new = 0.5 * (new + new.T)
        change = float(np.max(np.abs(new - Sigma)))
        Sigma = new
        if change < tol * max(1.0, float(np.max(np.abs(Sigma)))):
            break
    else:
        raise RiccatiConvergenceError(max_iters, change)
    K = np.linalg.solve(C @ Sigma @ C.T + R, C @ Sigma).T
    Gamma = A @ (np.eye(p.latent_dim) - K @ C)
    lam = float(np.max(np.abs(np.linalg.eigvals(Gamma)))) if p.latent_dim else 0.0
    return SteadyState(Sigma, K, Gamma, lam, it)


def real_modal_form(Gamma, real_tol=1e-10, defect_tol=1e-6):
    """Real block-diagonalization ``Gamma = E Lambda E^-1``.

    Real eigenvalues come first (1x1 blocks), then each complex pair
    ``sigma +- i omega`` (omega > 0) as ``[[sigma, omega], [-omega, sigma]]``
    with basis columns ``Re(v), Im(v)`` of the eigenvector for ``sigma + i omega``.
    """
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    D = Gamma.shape[0]
    lam, vecs = np.linalg.eig(Gamma)
    is_real = np.abs(lam.imag) < real_tol * (1 + np.abs(lam))
    upper = (~is_real) & (lam.imag > 0)
    n = int(is_real.sum())
    m = int(upper.sum())
    if n + 2 * m != D:
        raise DefectiveMatrixError("complex eigenvalues do not pair into conjugates")

    real_idx = np.flatnonzero(is_real)
    real_idx = real_idx[np.lexsort((-lam.real[real_idx], -np.abs(lam[real_idx])))]
    pair_idx = np.flatnonzero(upper)
    pair_idx = pair_idx[np.lexsort((-lam.imag[pair_idx], -np.abs(lam[pair_idx])))]

    E = np.zeros((D, D))
    Lam = np.zeros((D, D))
    for col, i in enumerate(real_idx):
        v = vecs[:, i].real
        E[:, col] = v / np.linalg.norm(v)
        Lam[col, col] = lam[i].real
    for k, i in enumerate(pair_idx):
        p = n + 2 * k
        v = vecs[:, i]
        E[:, p], E[:, p + 1] = v.real, v.imag
        sigma, omega = lam[i].real, lam[i].imag
        Lam[p:p + 2, p:p + 2] = [[sigma, omega], [-omega, sigma]]

    try:
        recon = E @ Lam @ np.linalg.inv(E)
    except np.linalg.LinAlgError as exc:
        raise DefectiveMatrixError("modal basis is singular") from exc
    resid = np.max(np.abs(recon - Gamma)) / max(1.0, np.max(np.abs(Gamma)))
    if not np.isfinite(resid) or resid > defect_tol:
        raise DefectiveMatrixError(f"modal reconstruction residual {resid:.3e}")
    return ModalForm(n, m, E, Lam)


def _pair_powers(sigma, omega, L):
    """Entries ``(sigma_l, omega_l)`` of ``[[s, w], [-w, s]]^l`` for ``l = 0..L-1``."""
    z = complex(sigma, omega) ** np.arange(L)
    return z.real, z.imag


def truncated_kalman_coeffs(ss, p, L):
    """Dense coefficients of the ``L``-lag truncated steady-state predictor.

    Returns ``(tensor, bias)`` with ``tensor[:, :, l-1] = C Gamma^(l-1) A K`` and
    ``bias = C sum_{l=1..L} Gamma^(l-1) (b - A K d) + d``. Computed by plain
    matrix powers, independently of any eigendecomposition.
    """
    AK = p.A @ ss.K
    N, D = p.obs_dim, p.latent_dim
    out = np.empty((N, N, L))
    power = np.eye(D)
    offset = np.zeros(D)
    drift = p.b - AK @ p.d
    for l in range(L):
        out[:, :, l] = p.C @ power @ AK
        offset += power @ drift
        power = ss.Gamma @ power
    return out, p.C @ offset + p.d


def lds_to_salt(p, L, mode="tucker", ss=None):
    """Single-state SALT model reproducing the truncated steady-state predictor.

    Tucker mode has rank ``n + 2m``; CP mode has rank ``n + 3m``. The emission
    covariance is the steady predictive covariance ``C Sigma C^T + R``.
    """
    if mode not in ("tucker", "cp"):
        raise ValueError(f"unknown mode {mode!r}")
    ss = ss or solve_dare(p)
    if ss.lambda_max >= 1:
        raise UnstableSystemError(f"Gamma has spectral radius {ss.lambda_max:.6g}")
    mf = real_modal_form(ss.Gamma)
    E, E_inv = mf.E, mf.E_inv
    n, m = mf.n_real, mf.n_complex_pairs
    AK = p.A @ ss.K
    lam = np.diag(mf.Lambda)

    if mode == "tucker":
        D = n + 2 * m
        W = np.zeros((L, D))
        G = np.zeros((D, D, D))
        for k in range(n):
            W[:, k] = lam[k] ** np.arange(L)
            G[k, k, k] = 1.0
        for i in range(m):
            q = n + 2 * i
            s_l, w_l = _pair_powers(mf.Lambda[q, q], mf.Lambda[q, q + 1], L)
            W[:, q], W[:, q + 1] = s_l, -w_l
            G[q, q, q] = G[q + 1, q + 1, q] = 1.0
            G[q, q + 1, q + 1] = -1.0
            G[q + 1, q, q + 1] = 1.0
        U = p.C @ E
        V = (E_inv @ AK).T
    else:
        D = n + 3 * m
        J = np.zeros((p.latent_dim, D))
        S = np.zeros((D, p.latent_dim))
        W = np.zeros((L, D))
        J[:, :n], S[:n] = E[:, :n], E_inv[:n]
        for k in range(n):
            W[:, k] = lam[k] ** np.arange(L)
        for i in range(m):
            q, c = n + 2 * i, n + 3 * i
            bvec, cvec = E[:, q], E[:, q + 1]
            e, f = E_inv[q], E_inv[q + 1]
            J[:, c:c + 3] = np.column_stack([bvec + cvec, bvec, cvec])
            S[c:c + 3] = np.vstack([e + f, f, e])
            s_l, w_l = _pair_powers(mf.Lambda[q, q], mf.Lambda[q, q + 1], L)
            W[:, c], W[:, c + 1], W[:, c + 2] = s_l, w_l - s_l, -w_l - s_l
        G = superdiagonal(np.ones(D))
        U = p.C @ J
        V = (S @ AK).T

    _, bias = truncated_kalman_coeffs(ss, p, L)
    cov = p.C @ ss.Sigma_pred @ p.C.T + p.R
    return SaltParams([TuckerFactors(U, V, W, G)], bias[None], (0.5 * (cov + cov.T))[None],
                      TransitionModel(np.ones((1, 1)), np.ones(1)), mode)


def steady_state_predictions(ss, p, y, mu0=None):
    """One-step predictive means ``C mu_{t|t-1} + d`` of the steady-state filter.

    The filter starts at ``mu0`` (default: stationary mean) and uses the
    constant gain for every step.
    """
    y = np.asarray(y, dtype=float)
    T = len(y)
    mu = stationary_moments(p)[0] if mu0 is None else np.asarray(mu0, dtype=float)
    AK = p.A @ ss.K
    drift = p.b - AK @ p.d
    preds = np.empty((T, p.obs_dim))
    for t in range(T):
        preds[t] = p.C @ mu + p.d
        mu = ss.Gamma @ mu + AK @ y[t] + drift
    return preds


def kalman_log_likelihoods(ss, p, y, mu0=None):
    """Per-frame log-densities of ``y`` under the steady-state Kalman predictor."""
    preds = steady_state_predictions(ss, p, y, mu0)
    cov = p.C @ ss.Sigma_pred @ p.C.T + p.R
    return gaussian_log_density(np.asarray(y) - preds, 0.5 * (cov + cov.T))


def modal_input_bound(ss, p, y):
    """``max_t ||E^-1 (A K y_t + b - A K d)||_inf`` in the complex eigenbasis."""
    _, E = np.linalg.eig(ss.Gamma)
    AK = p.A @ ss.K
    q = np.linalg.solve(E, (np.asarray(y) @ AK.T + (p.b - AK @ p.d)).T)
    return float(np.max(np.abs(q)))


def truncation_error_bound(ss, p, L, W=None, y=None):
    """Bound on ``||y_hat_Kalman - y_hat_truncated||_inf`` for ``L`` lags.

    ``W * max_n sum_d |(C E)_nd| * lambda_max^L / (1 - lambda_max)`` with ``E``
    the (complex) eigenvectors of Gamma. ``W`` bounds the modal inputs; pass it
    directly or give data ``y`` to take the empirical maximum.
    """
    lam = ss.lambda_max
    if lam >= 1:
        raise UnstableSystemError(f"Gamma has spectral radius {lam:.6g}")
    if W is None:
        if y is None:
            raise ValueError("either W or y is required")
        W = modal_input_bound(ss, p, y)
    _, E = np.linalg.eig(ss.Gamma)
    row = np.max(np.abs(p.C @ E).sum(axis=1))
    return float(W * row * lam ** L / (1 - lam))
