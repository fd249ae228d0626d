"""Dense three-way tensor algebra for Tucker / CP factorized regressions.

All vectorizations and matricizations are row-major (C order): the mode-1
matricization of an ``(N1, N2, N3)`` tensor has column index ``j * N3 + k``.
"""

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when array dimensions are inconsistent."""


@dataclass
class TuckerFactors:
    """Factors of ``A = sum_ijk g_ijk u_:i o v_:j o w_:k``.

    Attributes:
        U: (N1, D1) output factors.
        V: (N2, D2) input factors.
        W: (N3, D3) lag factors.
        G: (D1, D2, D3) core tensor. Superdiagonal for CP models.
    """

    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.G = np.asarray(self.G, dtype=float)
        check_factors(self)

    @property
    def shape(self):
        return self.U.shape[0], self.V.shape[0], self.W.shape[0]

    @property
    def ranks(self):
        return self.G.shape

    def copy(self):
        return TuckerFactors(self.U.copy(), self.V.copy(), self.W.copy(), self.G.copy())

    @classmethod
    def cp(cls, U, V, W, weights):
        """Build CP factors with a superdiagonal core holding ``weights``."""
        weights = np.asarray(weights, dtype=float).ravel()
        return cls(U, V, W, superdiagonal(weights))


def superdiagonal(weights):
    D = len(weights)
    G = np.zeros((D, D, D))
    G[np.arange(D), np.arange(D), np.arange(D)] = weights
    return G


def is_superdiagonal(G, atol=0.0):
    D = G.shape[0]
    if G.shape != (D, D, D):
        return False
    off = G.copy()
    off[np.arange(D), np.arange(D), np.arange(D)] = 0.0
    return bool(np.all(np.abs(off) <= atol))


def check_factors(f):
    if f.G.ndim != 3:
        raise ShapeError(f"core must be 3-way, got shape {f.G.shape}")
    D1, D2, D3 = f.G.shape
    for name, mat, d in (("U", f.U, D1), ("V", f.V, D2), ("W", f.W, D3)):
        if mat.ndim != 2 or mat.shape[1] != d:
            raise ShapeError(f"{name} has shape {mat.shape}, expected (*, {d})")


def materialize(f):
    """Dense ``(N1, N2, N3)`` tensor from Tucker factors."""
    check_factors(f)
    return np.einsum("ijk,pi,qj,lk->pql", f.G, f.U, f.V, f.W, optimize=True)


def contract_23(a, x):
    """``a x_{2,3} X``: sum over the trailing two modes against ``x``.

    ``x`` may also carry leading batch dimensions, ``(..., N2, N3)``.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if a.ndim != 3 or x.shape[-2:] != a.shape[1:]:
        raise ShapeError(f"cannot contract tensor {a.shape} with {x.shape}")
    return np.tensordot(x, a, axes=([-2, -1], [1, 2]))


def mode_n_matricize(t, n):
    """Row-major mode-``n`` unfolding, ``n`` in {1, 2, 3}."""
    t = np.asarray(t)
    if t.ndim != 3:
        raise ShapeError(f"expected a 3-way tensor, got shape {t.shape}")
    if n not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {n!r}")
    return np.moveaxis(t, n - 1, 0).reshape(t.shape[n - 1], -1)


def mode_n_fold(mat, n, shape):
    """Inverse of :func:`mode_n_matricize`."""
    if n not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {n!r}")
    shape = tuple(shape)
    lead = (shape[n - 1],) + tuple(s for i, s in enumerate(shape) if i != n - 1)
    mat = np.asarray(mat)
    if mat.size != np.prod(shape):
        raise ShapeError(f"matrix of shape {mat.shape} cannot fold into {shape}")
    return np.moveaxis(mat.reshape(lead), 0, n - 1)


def _check_input(f, x):
    x = np.asarray(x, dtype=float)
    N1, N2, N3 = f.shape
    if x.shape != (N2, N3):
        raise ShapeError(f"input has shape {x.shape}, expected {(N2, N3)}")
    return x


def predict_mean(f, x):
    """``U G_(1) vec(V^T X W)``, the cheapest of the equivalent mean forms."""
    x = _check_input(f, x)
    core = mode_n_matricize(f.G, 1)
    return f.U @ (core @ (f.V.T @ x @ f.W).ravel())


def predict_mean_forms(f, x):
    """The four algebraically equivalent forms of ``A x_{2,3} X``.

    Returns a dict keyed by ``"U"``, ``"V"``, ``"W"`` and ``"G"``; each form is
    linear in the corresponding factor and is the design used by that
    factor's coordinate update. Used for cross-checks only.
    """
    x = _check_input(f, x)
    D1, D2, D3 = f.G.shape
    core = mode_n_matricize(f.G, 1)
    left = f.U @ core
    inner = (f.V.T @ x @ f.W).ravel()
    return {
        "U": f.U @ (core @ inner),
        "V": left @ np.kron(np.eye(D2), f.W.T @ x.T) @ f.V.T.ravel(),
        "W": left @ np.kron(f.V.T @ x, np.eye(D3)) @ f.W.ravel(),
        "G": np.kron(f.U, inner[None, :]) @ f.G.ravel(),
    }
