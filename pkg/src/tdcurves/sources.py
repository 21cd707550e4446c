"""Episode samplers feeding the TD simulator.

Every source draws whole episodes and returns a ``Batch`` with features of
shape (batch, T+1, N) and rewards of shape (batch, T+1). Sources are cheap to
construct and hold no RNG state; the generator is passed per call so seed
bookkeeping stays with the caller.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, NumericalError
from .gridworld import GridWorldSpec, chain_ensemble, grid_rewards, place_cell_features, walk_states

# Dense Gaussian sampling factors a ((T+1)N)^2 covariance; cap the dimension.
MAX_JOINT_DIM = 4096


class Batch(NamedTuple):
    features: np.ndarray
    rewards: np.ndarray
    states: np.ndarray | None = None


def _psd_factor(cov: np.ndarray, label: str) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-8:
        raise NumericalError(f"{label} covariance is not PSD (min eigenvalue {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class HypercubeIID:
    """Features drawn uniformly from the +-1 hypercube, fresh at every time."""

    def __init__(self, n_features: int, n_transitions: int, reward_weights: np.ndarray):
        if n_features < 1 or n_transitions < 1:
            raise ConfigurationError("need n_features >= 1 and n_transitions >= 1")
        self.n_features = n_features
        self.n_transitions = n_transitions
        self.reward_weights = np.asarray(reward_weights, dtype=float)
        if self.reward_weights.shape != (n_features,):
            raise ConfigurationError("reward_weights length must equal n_features")

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        shape = (batch_size, self.n_transitions + 1, self.n_features)
        feats = rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
        return Batch(feats, feats @ self.reward_weights)


class PowerLawOU:
    """Independent stationary modes with exponential temporal correlations.

    Mode k has variance k^-a and correlation time tau_k = 10/(k+1), sampled
    exactly as a Gaussian AR(1) chain, so the law matches
    :func:`tdcurves.ensembles.build_powerlaw_ensemble` for the same exponents.
    """

    def __init__(
        self,
        n_features: int,
        n_transitions: int,
        spectral_exponent: float,
        target_exponent: float,
    ):
        if n_features < 1 or n_transitions < 1:
            raise ConfigurationError("need n_features >= 1 and n_transitions >= 1")
        if spectral_exponent <= 0 or target_exponent <= 0:
            raise ConfigurationError("power-law exponents must be positive")
        k = np.arange(1, n_features + 1, dtype=float)
        self.n_features = n_features
        self.n_transitions = n_transitions
        self.mode_std = k ** (-spectral_exponent / 2.0)
        self.phi = np.exp(-(k + 1.0) / 10.0)
        self.innovation_std = self.mode_std * np.sqrt(1.0 - self.phi**2)
        self.reward_weights = k**-target_exponent

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        tp1, n = self.n_transitions + 1, self.n_features
        z = rng.standard_normal((batch_size, tp1, n))
        feats = np.empty_like(z)
        feats[:, 0] = self.mode_std * z[:, 0]
        for t in range(1, tp1):
            feats[:, t] = self.phi * feats[:, t - 1] + self.innovation_std * z[:, t]
        return Batch(feats, feats @ self.reward_weights)


class GridDiffusion:
    """The actual grid random walk with tabular rewards."""

    def __init__(self, spec: GridWorldSpec):
        self.spec = spec
        self.n_features = spec.n_states
        self.n_transitions = spec.n_transitions
        self._psi = place_cell_features(spec)
        self._rewards = grid_rewards(spec)

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        states = walk_states(self.spec, rng, batch_size)
        # Gather columns of the place-cell matrix; a (B*T)xS matmul would be
        # two orders of magnitude more work for the same result.
        feats = self._psi[:, states].transpose(1, 2, 0)
        return Batch(feats, self._rewards[states], states)


class GaussianSurrogate:
    """Gaussian episodes matching the first two moments of a given ensemble.

    Dense ensembles are sampled from the full joint covariance, decoupled ones
    mode by mode, and finite-state chain ensembles through an exact linear
    Gaussian chain on state-indicator space (the joint dimension (T+1)*N of the
    grid task rules out the dense route).
    """

    def __init__(self, ensemble, reward_weights: np.ndarray | None = None,
                 state_rewards: np.ndarray | None = None):
        self.ensemble = ensemble
        self.n_features = ensemble.n_features
        self.n_transitions = ensemble.n_transitions
        rep = ensemble.representation
        if rep == "markov":
            if state_rewards is None:
                raise ConfigurationError("chain surrogate needs tabular state_rewards")
            self._state_rewards = np.asarray(state_rewards, dtype=float)
            self._chain_factors = ensemble.surrogate_noise_factors()
            self.reward_weights = reward_weights
        else:
            if reward_weights is None:
                raise ConfigurationError("surrogate needs reward_weights to emit rewards")
            self.reward_weights = np.asarray(reward_weights, dtype=float)
            if rep == "dense":
                tp1, n = ensemble.n_transitions + 1, ensemble.n_features
                dim = tp1 * n
                if dim > MAX_JOINT_DIM:
                    raise ConfigurationError(
                        f"joint Gaussian dimension {dim} too large for dense sampling"
                    )
                mean_flat = ensemble.mean.reshape(dim)
                cov = ensemble.second.transpose(0, 2, 1, 3).reshape(dim, dim)
                cov = cov - np.outer(mean_flat, mean_flat)
                self._mean_flat = mean_flat
                self._factor = _psd_factor(cov, "joint feature")
            elif rep == "decoupled":
                self._mode_factors = np.stack(
                    [_psd_factor(kern, f"mode {k + 1}") for k, kern in enumerate(ensemble.kernels)]
                )
            else:
                raise ConfigurationError(f"no surrogate for representation {rep!r}")

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        tp1, n = self.n_transitions + 1, self.n_features
        rep = self.ensemble.representation
        if rep == "dense":
            z = rng.standard_normal((batch_size, tp1 * n))
            flat = z @ self._factor.T + self._mean_flat
            feats = flat.reshape(batch_size, tp1, n)
            return Batch(feats, feats @ self.reward_weights)
        if rep == "decoupled":
            z = rng.standard_normal((batch_size, n, tp1))
            feats = np.einsum("kts,bks->bkt", self._mode_factors, z).transpose(0, 2, 1)
            feats += self.ensemble.mean[None]
            return Batch(feats, feats @ self.reward_weights)
        ens = self.ensemble
        pi, psi = ens.transition_matrix, ens.feature_matrix
        feats = np.empty((batch_size, tp1, n))
        rewards = np.empty((batch_size, tp1))
        g = np.zeros((batch_size, ens.n_states))
        for t in range(tp1):
            z = rng.standard_normal((batch_size, ens.n_states))
            if t == 0:
                g = z @ self._chain_factors[0].T
            else:
                g = g @ pi + z @ self._chain_factors[t].T
            occ = g + ens.marginals[t]
            feats[:, t] = occ @ psi.T
            rewards[:, t] = occ @ self._state_rewards
        return Batch(feats, rewards)


def grid_surrogate(spec: GridWorldSpec) -> GaussianSurrogate:
    """Convenience builder: chain surrogate for the grid task."""
    ens, w_r, r = chain_ensemble(spec)
    return GaussianSurrogate(ens, reward_weights=w_r, state_rewards=r)
