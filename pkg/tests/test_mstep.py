import numpy as np
import pytest

from oracles import per_step_design, weighted_lstsq
from saltmodel import mstep
from saltmodel.fit import m_step_bias_cov, m_step_core, m_step_input, m_step_lag, m_step_output
from saltmodel.hmm import HmmPosterior, TransitionModel
from saltmodel.model import SaltParams, lag_design
from saltmodel.tensor import TuckerFactors, is_superdiagonal, materialize, mode_n_matricize, superdiagonal


def random_problem(seed, N=3, L=4, D=2, T=60, H=2, cp=False, orthonormal=False):
    """Random SALT parameters, data and posterior weights.

    With ``orthonormal`` the factor columns are orthonormalized, as they are
    after gauge normalization inside the EM sweeps.
    """
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(T, N))
    factors = []
    for _ in range(H):
        G = superdiagonal(rng.normal(size=D)) if cp else rng.normal(size=(D, D, D))
        U, V, W = rng.normal(size=(N, D)), rng.normal(size=(N, D)), rng.normal(size=(L, D))
        if orthonormal:
            U, V, W = (np.linalg.qr(M)[0] for M in (U, V, W))
        factors.append(TuckerFactors(U, V, W, G))
    b = rng.normal(size=(H, N))
    S = rng.normal(size=(H, N, N))
    Sigma = S @ S.transpose(0, 2, 1) + N * np.eye(N)
    p = SaltParams(factors, b, Sigma, TransitionModel.uniform(H), "cp" if cp else "tucker")
    omega = rng.dirichlet(np.ones(H), size=T - L)
    post = HmmPosterior(omega, np.zeros((T - L - 1, H, H)), 0.0)
    return p, y, post


def design_rows(f, Xs, block, cp=False):
    """Per-step design matrices for one parameter block, written from the model formulas."""
    core = mode_n_matricize(f.G, 1)
    N, D = f.U.shape
    rows = []
    for X in Xs:
        inner = (f.V.T @ X @ f.W).ravel()
        if block == "U":
            rows.append(np.kron(np.eye(N), (core @ inner)[None]))
        elif block == "G":
            M = np.kron(f.U, inner[None])
            rows.append(M[:, np.arange(D) * (D * D + D + 1)] if cp else M)
        elif block == "V":
            rows.append(f.U @ core @ np.kron(np.eye(D), f.W.T @ X.T))
        elif block == "W":
            rows.append(f.U @ core @ np.kron(f.V.T @ X, np.eye(D)))
    return np.array(rows)


def oracle_block(p, y, post, h, block):
    f = p.factors[h]
    Xs, Ys = per_step_design(y, p.L)
    theta = weighted_lstsq(design_rows(f, Xs, block, p.mode == "cp"), Ys - p.b[h],
                           post.omega[:, h], np.linalg.inv(p.Sigma[h]))
    N, D, L = p.N, p.D, p.L
    if block == "U":
        return theta.reshape(N, D)
    if block == "G":
        return superdiagonal(theta) if p.mode == "cp" else theta.reshape(D, D, D)
    if block == "V":
        return theta.reshape(D, N).T
    return theta.reshape(L, D)


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


UPDATES = {"U": m_step_output, "G": m_step_core, "V": m_step_input, "W": m_step_lag}


@pytest.mark.parametrize("block", ["U", "G", "V", "W"])
@pytest.mark.parametrize("cp", [False, True])
@pytest.mark.parametrize("seed", range(4))
def test_block_update_matches_dense_oracle(block, cp, seed):
    p, y, post = random_problem(seed, cp=cp, D=3 if cp else 2)
    got = UPDATES[block](p, y, post)
    for h in range(p.H):
        assert rel_err(got[h], oracle_block(p, y, post, h, block)) < 1e-8


def test_bias_cov_matches_direct_formula():
    p, y, post = random_problem(7)
    Xs, Ys = per_step_design(y, p.L)
    for h, (b, S) in enumerate(m_step_bias_cov(p, y, post)):
        A = materialize(p.factors[h])
        w = post.omega[:, h]
        pred = np.array([np.einsum("pql,ql->p", A, X) for X in Xs])
        b_ref = (w[:, None] * (Ys - pred)).sum(axis=0) / w.sum()
        r = Ys - pred - b_ref
        S_ref = (w[:, None, None] * np.einsum("ti,tj->tij", r, r)).sum(axis=0) / w.sum()
        np.testing.assert_allclose(b, b_ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(S, S_ref + mstep.COV_JITTER * np.eye(p.N), rtol=1e-10)


def test_weighted_stats_match_loops():
    p, y, post = random_problem(8)
    X, Y = lag_design(y, p.L)
    Xs, Ys = per_step_design(y, p.L)
    np.testing.assert_array_equal(X, Xs.reshape(len(Xs), -1))
    w = post.omega[:, 0]
    s = mstep.WeightedStats.from_data(X, Y, w)
    np.testing.assert_allclose(s.sxx, sum(wi * np.outer(x, x) for wi, x in zip(w, X)), atol=1e-12)
    np.testing.assert_allclose(s.sxy, sum(wi * np.outer(x, yy) for wi, x, yy in zip(w, X, Y)), atol=1e-12)
    assert s.total == pytest.approx(w.sum())


@pytest.mark.parametrize("cp", [False, True])
def test_each_block_lowers_expected_nll(cp):
    p, y, post = random_problem(9, cp=cp, D=3)
    X, Y = lag_design(y, p.L)
    h = 0
    stats = mstep.WeightedStats.from_data(X, Y, post.omega[:, h])
    f, b, S = p.factors[h], p.b[h], p.Sigma[h]
    Si = np.linalg.inv(S)

    def nll(f):
        return mstep.expected_nll(mode_n_matricize(materialize(f), 1), b, S, stats)

    prev = nll(f)
    for step in (lambda f: mstep.update_output(f, stats, b),
                 lambda f: mstep.update_core(f, stats, b, Si, cp=cp),
                 lambda f: mstep.update_input(f, stats, b, Si),
                 lambda f: mstep.update_lag(f, stats, b, Si)):
        f = step(f)
        cur = nll(f)
        assert cur <= prev + 1e-9 * abs(prev)
        prev = cur
    A1 = mode_n_matricize(materialize(f), 1)
    b2, S2 = mstep.update_bias_cov(A1, stats)
    assert mstep.expected_nll(A1, b2, S2, stats) <= mstep.expected_nll(A1, b, S, stats)


def test_cp_core_stays_superdiagonal():
    p, y, post = random_problem(10, cp=True, D=3)
    for G in m_step_core(p, y, post):
        assert is_superdiagonal(G)


def test_singular_gram_uses_min_norm_solution():
    gram = np.array([[1.0, 1.0], [1.0, 1.0]])
    flags = []
    with pytest.warns(mstep.SingularGramWarning):
        x = mstep.solve_normal(gram, np.array([2.0, 2.0]), flags)
    assert flags == [1]
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)
    with pytest.warns(mstep.SingularGramWarning):
        X = mstep.solve_normal(gram, np.array([[2.0, 4.0], [2.0, 4.0]]))
    np.testing.assert_allclose(X, [[1.0, 2.0], [1.0, 2.0]], atol=1e-12)


@pytest.mark.parametrize("cp", [False, True])
@pytest.mark.parametrize("L", [2, 5])
def test_gauge_normalization_preserves_tensor(cp, L):
    rng = np.random.default_rng(12)
    D = 3
    G = superdiagonal(rng.normal(size=D)) if cp else rng.normal(size=(D, D, D))
    f = TuckerFactors(1e3 * rng.normal(size=(4, D)), 1e-3 * rng.normal(size=(4, D)),
                      rng.normal(size=(L, D)), G)
    g = mstep.normalize_gauge(f, cp)
    np.testing.assert_allclose(materialize(g), materialize(f), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(g.U, axis=0), 1.0)
    if cp:
        assert is_superdiagonal(g.G)
    else:
        np.testing.assert_allclose(g.U.T @ g.U, np.eye(D), atol=1e-12)


def test_degenerate_state_is_frozen():
    p, y, post = random_problem(11)
    post.omega[:, 0] = 1.0
    post.omega[:, 1] = 0.0
    U = m_step_output(p, y, post)
    np.testing.assert_array_equal(U[1], p.factors[1].U)
    (b0, _), (b1, S1) = m_step_bias_cov(p, y, post)
    np.testing.assert_array_equal(b1, p.b[1])
