"""Synthetic ground truths: rotational LDSs, scripted switching LDSs, Lorenz."""

from dataclasses import dataclass

import numpy as np

from .hmm import TransitionModel
from .lds import LdsParams, _rollout, stationary_moments


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def random_rotational_lds(n_real, m_pairs, N, decay, seed, q=0.1, r=0.1,
                          min_angle=np.pi / 12, max_angle=np.pi / 2):
    """LDS with ``n_real`` real modes and ``m_pairs`` rotations, all of modulus ``decay``.

    ``A`` is block diagonal: real entries ``+-decay`` then ``decay * rotation(theta)``
    blocks with angles drawn uniformly from ``[min_angle, max_angle]``. ``C`` has
    unit-norm Gaussian columns, ``Q = q I``, ``R = r I`` and ``b = d = 0``.
    """
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    D = n_real + 2 * m_pairs
    A = np.zeros((D, D))
    signs = np.where(rng.random(n_real) < 0.5, -1.0, 1.0) if n_real > 1 else np.ones(n_real)
    A[np.arange(n_real), np.arange(n_real)] = decay * signs
    for i in range(m_pairs):
        k = n_real + 2 * i
        A[k:k + 2, k:k + 2] = decay * rotation(rng.uniform(min_angle, max_angle))
    C = rng.standard_normal((N, D))
    C /= np.linalg.norm(C, axis=0)
    return LdsParams(A, np.zeros(D), q * np.eye(D), C, np.zeros(N), r * np.eye(N))


@dataclass
class SldsGroundTruth:
    """Switching LDS with per-state dynamics and shared emissions."""

    A: list
    b: list
    Q: list
    C: np.ndarray
    d: np.ndarray
    R: np.ndarray
    tm: TransitionModel = None
    x0: np.ndarray = None

    def __post_init__(self):
        D = self.C.shape[1]
        for h, (A, b, Q) in enumerate(zip(self.A, self.b, self.Q)):
            if A.shape != (D, D) or b.shape != (D,) or Q.shape != (D, D):
                raise ValueError(f"state {h} dynamics do not match latent dimension {D}")
        if self.tm is not None and self.tm.num_states != len(self.A):
            raise ValueError("transition model does not match the number of states")

    @property
    def num_states(self):
        return len(self.A)

    def state_lds(self, h):
        return LdsParams(self.A[h], self.b[h], self.Q[h], self.C, self.d, self.R)


def evenly_spaced_script(T, n_switches, H):
    """State sequence with ``n_switches`` evenly spaced switches cycling through states."""
    edges = np.linspace(0, T, n_switches + 2).round().astype(int)
    states = np.empty(T, dtype=int)
    for seg, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        states[a:b] = seg % H
    return states


def sample_markov_states(tm, T, rng):
    states = np.empty(T, dtype=int)
    states[0] = rng.choice(tm.num_states, p=tm.init)
    cum = np.cumsum(tm.pi, axis=1)
    u = rng.random(T)
    for t in range(1, T):
        states[t] = min(np.searchsorted(cum[states[t - 1]], u[t], side="right"), tm.num_states - 1)
    return states


def simulate_slds(gt, T, seed, script=None, n_switches=None, return_latent=False):
    """Sample a switching LDS.

    The state sequence is ``script`` if given, otherwise ``n_switches`` evenly
    spaced switches, otherwise a Markov chain draw from ``gt.tm``. Discrete
    draws use a generator seeded with ``[seed, 1]`` so the continuous noise
    stream matches :func:`saltmodel.lds.simulate_lds` for the same seed.

    Returns:
        ``(y, states)`` or ``(y, states, x)`` with ``return_latent``.
    """
    if script is not None:
        states = np.asarray(script, dtype=int)
        if len(states) != T:
            raise ValueError(f"script has length {len(states)}, expected {T}")
    elif n_switches is not None:
        states = evenly_spaced_script(T, n_switches, gt.num_states)
    else:
        if gt.tm is None:
            raise ValueError("Markov sampling needs a transition model")
        states = sample_markov_states(gt.tm, T, np.random.default_rng([seed, 1]))
    if states.min() < 0 or states.max() >= gt.num_states:
        raise ValueError("state sequence contains invalid states")

    rng = np.random.default_rng(seed)
    D = gt.C.shape[1]
    if gt.x0 is not None:
        x0 = np.asarray(gt.x0, dtype=float)
        rng.standard_normal(D)  # keep the noise stream aligned with simulate_lds
    else:
        first = gt.state_lds(int(states[0]))
        if first.is_stable:
            mean, cov = stationary_moments(first)
        else:
            mean, cov = np.zeros(D), first.Q
        x0 = mean + np.linalg.cholesky(cov) @ rng.standard_normal(D)
    x, y = _rollout(gt.A, gt.b, gt.Q, gt.C, gt.d, gt.R, states, x0, rng)
    return (y, states, x) if return_latent else (y, states)


# NASCAR-style oval: two straightaways and two half turns in a 2-D latent space.

NASCAR_HALF_LENGTH = 1.0
NASCAR_RADIUS = 1.0


def nascar(N=10, seed=0, steps_straight=50, steps_turn=50, contraction=0.9995,
           lateral=0.9, q=1e-5, r=1e-3):
    """Four-state oval track ground truth with shared emissions.

    States: 0 bottom straight (moving +x), 1 right half turn, 2 top straight
    (moving -x), 3 left half turn; the track runs counter-clockwise with
    straights at ``y = -+radius`` between ``x = -+half_length`` and turns
    centred at ``(+-half_length, 0)``. Every dynamics matrix has spectral
    radius below one: turns rotate with slight contraction towards their
    centre, and straights contract laterally onto their line.
    """
    c, rad = NASCAR_HALF_LENGTH, NASCAR_RADIUS
    rng = np.random.default_rng(seed)
    As, bs = [], []

    # straights: x converges geometrically to a far target so that the segment
    # from -c to +c takes exactly steps_straight steps
    rho_n = contraction ** steps_straight
    for direction, y_line in ((1.0, -rad), (-1.0, rad)):
        x_start, x_end = -direction * c, direction * c
        target = (x_end - rho_n * x_start) / (1 - rho_n)
        A = np.diag([contraction, lateral])
        b = np.array([(1 - contraction) * target, (1 - lateral) * y_line])
        As.append(A)
        bs.append(b)

    theta = np.pi / steps_turn
    turns = []
    for centre_x in (c, -c):
        A = contraction * rotation(theta)
        centre = np.array([centre_x, 0.0])
        turns.append((A, centre - A @ centre))
    As = [As[0], turns[0][0], As[1], turns[1][0]]
    bs = [bs[0], turns[0][1], bs[1], turns[1][1]]

    C = rng.standard_normal((N, 2))
    C /= np.linalg.norm(C, axis=0)
    d = rng.standard_normal(N)
    Qs = [q * np.eye(2)] * 4
    return SldsGroundTruth(As, bs, Qs, C, d, r * np.eye(N), x0=np.array([-c, -rad]))


def nascar_script(T, steps_straight=50, steps_turn=50):
    lap = np.concatenate([np.full(steps_straight, 0), np.full(steps_turn, 1),
                          np.full(steps_straight, 2), np.full(steps_turn, 3)])
    reps = -(-T // len(lap))
    return np.tile(lap, reps)[:T]


def lorenz_rhs(state, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x, y, z = state
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def rk4_integrate(f, x0, dt, n_steps):
    """Classic fourth-order Runge-Kutta; returns ``n_steps + 1`` states."""
    out = np.empty((n_steps + 1, len(x0)))
    x = np.asarray(x0, dtype=float)
    out[0] = x
    for i in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = x
    return out


def lorenz_series(T, dt=0.01, N=20, noise_scale=0.1, seed=0, emission=None, burn_in=1000,
                  return_latent=False):
    """Lorenz attractor (10, 28, 8/3), z-scored, linearly mapped to ``N`` dimensions.

    Args:
        T: number of output steps.
        dt: integration step.
        N: observation dimension (ignored when ``emission`` is given).
        noise_scale: standard deviation of additive Gaussian noise.
        seed: seeds the initial condition, the random map and the noise.
        emission: optional explicit (N, 3) map.
        burn_in: steps discarded to reach the attractor.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    x0 = np.array([1.0, 1.0, 20.0]) + rng.standard_normal(3)
    traj = rk4_integrate(lorenz_rhs, x0, dt, burn_in + T - 1)[burn_in:]
    z = (traj - traj.mean(axis=0)) / traj.std(axis=0)
    if emission is None:
        emission = rng.standard_normal((N, 3)) / np.sqrt(3)
    emission = np.atleast_2d(np.asarray(emission, dtype=float))
    y = z @ emission.T + noise_scale * rng.standard_normal((T, emission.shape[0]))
    return (y, z) if return_latent else y
