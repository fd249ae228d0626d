import numpy as np
import pytest

from saltmodel.datagen import (SldsGroundTruth, evenly_spaced_script, lorenz_rhs, lorenz_series,
                               nascar, nascar_script, random_rotational_lds, rk4_integrate,
                               rotation, sample_markov_states, simulate_slds)
from saltmodel.hmm import TransitionModel
from saltmodel.lds import simulate_lds


@pytest.mark.parametrize("seed", range(3))
def test_rotational_lds_spectrum(seed):
    p = random_rotational_lds(2, 3, 12, 0.85, seed)
    ev = np.linalg.eigvals(p.A)
    np.testing.assert_allclose(np.abs(ev), 0.85, atol=1e-12)
    assert np.sum(np.abs(ev.imag) > 1e-12) == 6
    np.testing.assert_allclose(np.linalg.norm(p.C, axis=0), 1.0)


def test_rotational_lds_scalar():
    p = random_rotational_lds(1, 0, 1, 0.5, 0)
    np.testing.assert_array_equal(p.A, [[0.5]])
    assert abs(p.C[0, 0]) == pytest.approx(1.0)


def test_rotational_lds_rejects_bad_decay():
    with pytest.raises(ValueError):
        random_rotational_lds(1, 1, 3, 1.0, 0)


def two_state_gt(N=3):
    rng = np.random.default_rng(0)
    As = [0.9 * rotation(0.2), 0.5 * np.eye(2)]
    return SldsGroundTruth(As, [np.zeros(2), np.ones(2)], [0.01 * np.eye(2)] * 2,
                           rng.normal(size=(N, 2)), np.zeros(N), 0.01 * np.eye(N))


def test_scripted_switch():
    gt = two_state_gt()
    script = np.r_[np.zeros(50, int), np.ones(50, int)]
    y, states, x = simulate_slds(gt, 100, 3, script=script, return_latent=True)
    np.testing.assert_array_equal(states, script)
    # after the switch the latent mean drifts to the second state's fixed point (2, 2)
    assert np.abs(x[-10:].mean(axis=0) - 2.0).max() < 0.2


def test_single_state_matches_lds_simulator():
    gt = two_state_gt()
    y, _ = simulate_slds(gt, 200, 5, script=np.zeros(200, int))
    np.testing.assert_allclose(y, simulate_lds(gt.state_lds(0), 200, 5), atol=1e-12)


def test_evenly_spaced_script():
    s = evenly_spaced_script(100, 3, 2)
    assert np.count_nonzero(np.diff(s)) == 3
    np.testing.assert_array_equal(s[:25], 0)


def test_markov_transition_frequencies():
    pi = np.array([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]])
    tm = TransitionModel(pi, [1.0, 0.0, 0.0])
    s = sample_markov_states(tm, 100_000, np.random.default_rng(0))
    for i in range(3):
        nxt = s[1:][s[:-1] == i]
        n = len(nxt)
        for j in range(3):
            freq = np.mean(nxt == j)
            se = np.sqrt(pi[i, j] * (1 - pi[i, j]) / n)
            assert abs(freq - pi[i, j]) <= 3 * se + 1e-12


def test_markov_sampling_requires_transition_model():
    with pytest.raises(ValueError):
        simulate_slds(two_state_gt(), 10, 0)


def test_nascar_lap_closes():
    gt = nascar(N=10, seed=0)
    lap = 200
    _, states, x = simulate_slds(gt, 4 * lap + 1, 1, script=np.r_[nascar_script(4 * lap), 0],
                                 return_latent=True)
    perimeter = 4.0 + 2 * np.pi
    for k in range(1, 5):
        assert np.linalg.norm(x[k * lap] - x[0]) < 0.05 * perimeter
    # the track visits both turns
    assert x[:, 0].max() > 1.5 and x[:, 0].min() < -1.5
    for A in gt.A:
        assert np.max(np.abs(np.linalg.eigvals(A))) < 1


def test_lorenz_identity_map_is_z_scored_state():
    y, z = lorenz_series(500, emission=np.eye(3), noise_scale=0.0, seed=2, return_latent=True)
    np.testing.assert_array_equal(y, z)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-12)


def test_lorenz_deterministic():
    np.testing.assert_array_equal(lorenz_series(100, seed=4), lorenz_series(100, seed=4))
    assert lorenz_series(100, N=7).shape == (100, 7)


def test_rk4_step_halving():
    x0 = np.array([1.0, 1.0, 20.0])
    h = 0.01
    a, b, c = (rk4_integrate(lorenz_rhs, x0, h / k, 50 * k)[-1] for k in (1, 2, 4))
    # fourth order: successive differences shrink by 2^4 per halving
    assert np.linalg.norm(a - b) / np.linalg.norm(b - c) == pytest.approx(16, rel=0.05)
