"""Random-walk grid world with place-cell features.

The environment is a side x side grid. Episodes start at the center, each step
picks one of the four axis moves uniformly, and moves that would leave the grid
are clamped (the walker stays put), so boundary sites carry extra self-mass.
Features are Gaussian place cells centered on every grid site and rewards are
tabular functions of the state.

Because the state marginal p_t and the transition kernel determine every
feature moment in closed form, the ensemble is represented in a factored
"markov" layout: Sigma(t, t+d) = Psi diag(p_t) Pi^d Psi^T. All contractions
needed by the learning-curve recursions run in state space against a
precomputed stack of transition-matrix powers, never touching the dense
(T+1, T+1, N, N) tensor, which would not fit in memory at side 17 and T = 50.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError


@dataclass(frozen=True)
class GridWorldSpec:
    """Geometry, episode length, features, and reward layout of the grid task."""

    side: int = 17
    n_transitions: int = 50
    place_cell_width: float = 0.7
    reward_kind: str = "delta"
    reward_site: tuple[int, int] | None = None
    reward_width: float = 3.0
    # Sampling budget for moment estimation runs. Exact chain moments are the
    # default; the budget applies only when an estimated ensemble is requested.
    estimation_trajectories: int = 5000
    exact_moments: bool = True

    def __post_init__(self):
        if self.side < 2:
            raise ConfigurationError("grid side must be at least 2")
        if self.n_transitions < 1:
            raise ConfigurationError("need at least one transition per episode")
        if self.place_cell_width <= 0:
            raise ConfigurationError("place_cell_width must be positive")
        if self.reward_kind not in ("delta", "bump", "uniform"):
            raise ConfigurationError(f"unknown reward_kind {self.reward_kind!r}")

    @property
    def n_states(self) -> int:
        return self.side * self.side

    @property
    def start_state(self) -> int:
        c = self.side // 2
        return c * self.side + c


def state_coords(side: int) -> np.ndarray:
    """Integer (row, col) coordinates of every state, shape (side*side, 2)."""
    rows, cols = np.divmod(np.arange(side * side), side)
    return np.stack([rows, cols], axis=1).astype(float)


def neighbor_table(side: int) -> np.ndarray:
    """Clamped successor for each of the 4 moves, shape (n_states, 4)."""
    rows, cols = np.divmod(np.arange(side * side), side)
    table = np.empty((side * side, 4), dtype=np.int64)
    for m, (dr, dc) in enumerate([(-1, 0), (1, 0), (0, -1), (0, 1)]):
        r = np.clip(rows + dr, 0, side - 1)
        c = np.clip(cols + dc, 0, side - 1)
        table[:, m] = r * side + c
    return table


def transition_matrix(side: int) -> np.ndarray:
    """Row-stochastic kernel of the clamped uniform random walk."""
    nbr = neighbor_table(side)
    s = side * side
    pi = np.zeros((s, s))
    for m in range(4):
        np.add.at(pi, (np.arange(s), nbr[:, m]), 0.25)
    return pi


def place_cell_features(spec: GridWorldSpec) -> np.ndarray:
    """Gaussian bump responses, one cell per site, shape (n_states, n_states).

    Column s is the feature vector of state s: psi_k(s) =
    exp(-||x_s - c_k||^2 / (2 width^2)) with centers c_k on the grid sites.
    """
    coords = state_coords(spec.side)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * spec.place_cell_width**2))


def grid_rewards(spec: GridWorldSpec) -> np.ndarray:
    """Tabular reward vector over states for the configured reward layout."""
    if spec.reward_kind == "uniform":
        return np.ones(spec.n_states)
    site = spec.reward_site
    if site is None:
        c = spec.side // 2
        site = (c, c)
    if not (0 <= site[0] < spec.side and 0 <= site[1] < spec.side):
        raise ConfigurationError(f"reward site {site} outside a side-{spec.side} grid")
    if spec.reward_kind == "delta":
        r = np.zeros(spec.n_states)
        r[site[0] * spec.side + site[1]] = 1.0
        return r
    coords = state_coords(spec.side)
    d2 = ((coords - np.asarray(site, dtype=float)) ** 2).sum(axis=1)
    return np.exp(-d2 / (2.0 * spec.reward_width**2))


class MarkovChainEnsemble:
    """Feature moments of a finite-state chain, kept in factored form.

    Stores the transition kernel Pi, the feature matrix Psi (features x states),
    and the start distribution. Marginals p_t and the power stack Pi^d are
    precomputed once; every moment contraction reduces to O(T S^2) work.
    """

    representation = "markov"

    def __init__(
        self,
        transition_matrix: np.ndarray,
        feature_matrix: np.ndarray,
        start_distribution: np.ndarray,
        n_transitions: int,
    ):
        pi = np.asarray(transition_matrix, dtype=float)
        psi = np.asarray(feature_matrix, dtype=float)
        p0 = np.asarray(start_distribution, dtype=float)
        n_transitions = int(n_transitions)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise ConfigurationError("transition matrix must be square")
        s = pi.shape[0]
        if psi.ndim != 2 or psi.shape[1] != s:
            raise ConfigurationError("feature matrix must have shape (n_features, n_states)")
        if p0.shape != (s,):
            raise ConfigurationError("start distribution length must match the state count")
        if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("transition matrix rows must be probability vectors")
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-12:
            raise ConfigurationError("start distribution must be a probability vector")
        if n_transitions < 1:
            raise ConfigurationError("need at least one transition per episode")

        self.transition_matrix = pi
        self.feature_matrix = psi
        self.start_distribution = p0
        self.n_features = psi.shape[0]
        self.n_states = s
        self.n_transitions = n_transitions

        tp1 = n_transitions + 1
        self.marginals = np.empty((tp1, s))
        self.marginals[0] = p0
        for t in range(n_transitions):
            self.marginals[t + 1] = self.marginals[t] @ pi
        self.pi_powers = np.empty((tp1, s, s))
        self.pi_powers[0] = np.eye(s)
        for d in range(n_transitions):
            self.pi_powers[d + 1] = self.pi_powers[d] @ pi

    @property
    def mean(self) -> np.ndarray:
        return self.marginals @ self.feature_matrix.T

    def sigma(self, a: int, b: int) -> np.ndarray:
        psi = self.feature_matrix
        if b >= a:
            return (psi * self.marginals[a]) @ self.pi_powers[b - a] @ psi.T
        return self.sigma(b, a).T

    def sigma_bar(self) -> np.ndarray:
        psi = self.feature_matrix
        pbar = self.marginals[: self.n_transitions].mean(axis=0)
        out = (psi * pbar) @ psi.T
        return 0.5 * (out + out.T)

    def sigma_plus(self) -> np.ndarray:
        psi = self.feature_matrix
        pbar = self.marginals[: self.n_transitions].mean(axis=0)
        return (psi * pbar) @ self.transition_matrix @ psi.T

    def fro_grid(self, y: np.ndarray) -> np.ndarray:
        tp1 = self.n_transitions + 1
        psi, marg = self.feature_matrix, self.marginals
        z = psi.T @ y @ psi
        # row-sums of Pi^d (elementwise *) z give, dotted with p_a, the
        # contraction sum_kl Sigma_kl(a, a+d) y_kl; the transposed z handles
        # blocks below the diagonal through exchange symmetry.
        up = np.einsum("dij,ij->di", self.pi_powers, z) @ marg.T
        lo = np.einsum("dij,ij->di", self.pi_powers, z.T) @ marg.T
        grid = np.empty((tp1, tp1))
        for d in range(tp1):
            rng = np.arange(tp1 - d)
            grid[rng, rng + d] = up[d, : tp1 - d]
            if d > 0:
                grid[rng + d, rng] = lo[d, : tp1 - d]
        return grid

    def weighted_block_sum(self, weights: np.ndarray) -> np.ndarray:
        tp1 = self.n_transitions + 1
        if weights.shape != (tp1, tp1):
            raise ConfigurationError("weight grid must have shape (T+1, T+1)")
        marg = self.marginals
        inner = np.zeros((self.n_states, self.n_states))
        for d in range(tp1):
            rng = np.arange(tp1 - d)
            q = weights[rng, rng + d] @ marg[: tp1 - d]
            inner += q[:, None] * self.pi_powers[d]
            if d > 0:
                r = weights[rng + d, rng] @ marg[: tp1 - d]
                inner += self.pi_powers[d].T * r[None, :]
        return self.feature_matrix @ inner @ self.feature_matrix.T

    def sigma_apply(self, a: int, b: int, v: np.ndarray) -> np.ndarray:
        psi = self.feature_matrix
        u = psi.T @ v
        if b >= a:
            u = self.marginals[a] * (self.pi_powers[b - a] @ u)
        else:
            u = self.pi_powers[a - b].T @ (self.marginals[b] * u)
        return psi @ u

    def surrogate_noise_factors(self) -> list[np.ndarray]:
        """Square roots of the one-step conditional covariances of the chain.

        Entry 0 factors the start covariance diag(p0) - p0 p0^T; entry t+1
        factors W_t = diag(p_{t+1}) - Pi^T diag(p_t) Pi, the mean conditional
        covariance of the successor indicator. Both are PSD by construction;
        eigenvalues are clipped at zero before taking roots.
        """
        factors = []
        p0 = self.start_distribution
        cov = np.diag(p0) - np.outer(p0, p0)
        for t in range(self.n_transitions + 1):
            if t > 0:
                pt = self.marginals[t - 1]
                cov = np.diag(self.marginals[t]) - self.transition_matrix.T @ (
                    pt[:, None] * self.transition_matrix
                )
            cov = 0.5 * (cov + cov.T)
            vals, vecs = np.linalg.eigh(cov)
            if vals.min() < -1e-8:
                raise NumericalError(f"chain noise covariance at step {t} is not PSD")
            factors.append(vecs * np.sqrt(np.clip(vals, 0.0, None)))
        return factors


def chain_ensemble(spec: GridWorldSpec) -> tuple[MarkovChainEnsemble, np.ndarray, np.ndarray]:
    """Exact moment ensemble of the grid task plus its reward in both bases.

    Returns (ensemble, reward_weights, state_rewards) where reward_weights
    solves Psi^T w = R so rewards are a linear readout of the features. The
    solve is refused when the place-cell design is too ill-conditioned to trust.
    """
    psi = place_cell_features(spec)
    pi = transition_matrix(spec.side)
    p0 = np.zeros(spec.n_states)
    p0[spec.start_state] = 1.0
    r = grid_rewards(spec)
    cond = np.linalg.cond(psi)
    if cond > 1e10:
        raise NumericalError(
            f"place-cell design matrix condition number {cond:.2e} too large; widen or narrow the cells"
        )
    w_r = np.linalg.solve(psi.T, r)
    ens = MarkovChainEnsemble(pi, psi, p0, spec.n_transitions)
    return ens, w_r, r


def walk_states(spec: GridWorldSpec, rng: np.random.Generator, batch_size: int) -> np.ndarray:
    """Sample batch_size independent walks, shape (batch_size, T+1) of state ids."""
    nbr = neighbor_table(spec.side)
    states = np.empty((batch_size, spec.n_transitions + 1), dtype=np.int64)
    states[:, 0] = spec.start_state
    moves = rng.integers(0, 4, size=(batch_size, spec.n_transitions))
    for t in range(spec.n_transitions):
        states[:, t + 1] = nbr[states[:, t], moves[:, t]]
    return states


def sample_episode(spec: GridWorldSpec, rng: np.random.Generator):
    """One walk through the grid: (features (T+1, N), rewards (T+1,), states (T+1,))."""
    psi = place_cell_features(spec)
    r = grid_rewards(spec)
    states = walk_states(spec, rng, 1)[0]
    return psi[:, states].T, r[states], states
