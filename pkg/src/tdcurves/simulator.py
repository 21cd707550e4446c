"""Stochastic batched online TD(0) with annealing, shaping, and reward noise.

Each iteration draws a fresh batch of episodes, applies one semi-gradient
update averaged over the batch and the T transitions, and records the value
error against the TD fixed point. Iterations are 1-indexed for the learning
rate schedule (0^-chi is undefined); curve index 0 holds the initial error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensembles import ReducedMatrices
from .errors import ConfigurationError

DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class EtaSchedule:
    """Power-law annealed learning rate, eta_n = eta0 * n^-chi for n >= 1."""

    eta0: float
    chi: float = 0.0

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ConfigurationError("eta0 must be positive")
        if self.chi < 0:
            raise ConfigurationError("annealing exponent chi must be nonnegative")


def eta_at(schedule: EtaSchedule, n: int) -> float:
    """Learning rate at iteration n >= 1."""
    if n < 1:
        raise ConfigurationError("iterations are 1-indexed for scheduling; n=0 is the initial state")
    return schedule.eta0 * float(n) ** -schedule.chi


@dataclass
class LearnerConfig:
    gamma: float
    batch_size: int
    n_steps: int
    schedule: EtaSchedule
    w0: np.ndarray | None = None
    shaping: np.ndarray | None = None
    action_noise: np.ndarray | float | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be at least 1")

    def noise_std(self, n_transitions: int) -> np.ndarray | None:
        """Per-transition reward noise standard deviations, or None."""
        if self.action_noise is None:
            return None
        var = np.broadcast_to(np.asarray(self.action_noise, dtype=float), (n_transitions,))
        if np.any(var < 0):
            raise ConfigurationError("action noise variances must be nonnegative")
        return np.sqrt(var)


@dataclass
class LearningCurve:
    """Per-seed value-error traces plus aggregates over the non-diverged seeds."""

    variant: str
    seeds: list[int]
    per_seed: np.ndarray  # (n_seeds, n_steps+1), NaN after a divergence
    etas: np.ndarray  # (n_steps+1,), index 0 is 0.0 (no step taken yet)
    diverged: list[bool]

    @property
    def iterations(self) -> np.ndarray:
        return np.arange(self.per_seed.shape[1])

    def _valid(self) -> np.ndarray:
        keep = ~np.asarray(self.diverged, dtype=bool)
        return self.per_seed[keep]

    @property
    def mean(self) -> np.ndarray:
        rows = self._valid()
        if rows.shape[0] == 0:
            return np.full(self.per_seed.shape[1], np.nan)
        return rows.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        rows = self._valid()
        if rows.shape[0] < 2:
            return np.zeros(self.per_seed.shape[1])
        return rows.std(axis=0, ddof=1) / np.sqrt(rows.shape[0])


def td_update_step(
    w: np.ndarray, batch, eta: float, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """One semi-gradient step from a batch of episodes.

    The value estimate V(t) = psi(t) . w is held fixed within the step. Returns
    the updated weights and the per-episode TD errors, shape (B, T).
    """
    feats, rewards = batch.features, batch.rewards
    if feats.ndim != 3 or feats.shape[-1] != w.shape[0]:
        raise ConfigurationError(
            f"feature batch shape {feats.shape} incompatible with {w.shape[0]} weights"
        )
    if rewards.shape != feats.shape[:2]:
        raise ConfigurationError("rewards must be (batch, T+1) matching the features")
    b, tp1 = rewards.shape
    t_len = tp1 - 1
    values = feats @ w
    deltas = rewards[:, :t_len] + gamma * values[:, 1:] - values[:, :t_len]
    grad = np.einsum("bt,btn->n", deltas, feats[:, :t_len])
    return w + (eta / (t_len * b)) * grad, deltas


def reshape_rewards(
    rewards: np.ndarray, features: np.ndarray, w_phi: np.ndarray, gamma: float
) -> np.ndarray:
    """Potential-based reward shaping with phi(s) = psi(s) . w_phi.

    The first step of the episode has no incoming potential, so r~(0) =
    r(0) - gamma*phi(1); interior steps get the full telescoping term. The
    terminal entry r(T) has no outgoing transition and passes through.
    """
    phi = features @ w_phi
    out = rewards.astype(float).copy()
    t_len = rewards.shape[-1] - 1
    out[..., 0] -= gamma * phi[..., 1]
    if t_len > 1:
        out[..., 1:t_len] += phi[..., 1:t_len] - gamma * phi[..., 2:]
    return out


def value_error(
    w: np.ndarray,
    reduced: ReducedMatrices,
    w_td: np.ndarray,
    action_noise: np.ndarray | float | None = None,
) -> float:
    """Typical value error (1/N)(w - w_TD)^T sigma_bar (w - w_TD), plus noise floor.

    Action-dependent reward noise is unexplainable by state features and adds
    its mean variance (1/T) sum_t sigma_t^2 as an irreducible offset.
    """
    diff = np.asarray(w, dtype=float) - np.asarray(w_td, dtype=float)
    n = reduced.sigma_bar.shape[0]
    if diff.shape != (n,):
        raise ConfigurationError("weight dimension does not match the reduced matrices")
    err = float(diff @ reduced.sigma_bar @ diff) / n
    if action_noise is not None:
        err += float(np.mean(np.atleast_1d(action_noise)))
    return err


@dataclass
class RunResult:
    curve: LearningCurve
    final_weights: np.ndarray  # (n_seeds, N), last finite iterate per seed


def run_td(
    config: LearnerConfig,
    source,
    seeds: list[int],
    reduced: ReducedMatrices,
    w_td: np.ndarray,
    evaluate=None,
) -> RunResult:
    """Run the TD learner once per seed and collect value-error curves.

    ``evaluate`` overrides the default quadratic-form metric with a callable
    w -> error (used for empirical grid-world evaluation); the divergence guard
    always watches the quadratic form, which the mean-field theory predicts.
    """
    if len(seeds) == 0:
        raise ConfigurationError("need at least one seed")
    n = source.n_features
    t_len = source.n_transitions
    w0 = np.zeros(n) if config.w0 is None else np.asarray(config.w0, dtype=float)
    if w0.shape != (n,):
        raise ConfigurationError(f"w0 must have length {n}")
    if config.shaping is not None and np.shape(config.shaping) != (n,):
        raise ConfigurationError(f"shaping potential must have length {n}")
    noise_std = config.noise_std(t_len)
    noise_var = None if noise_std is None else noise_std**2

    def measure(w: np.ndarray) -> float:
        if evaluate is not None:
            return float(evaluate(w))
        return value_error(w, reduced, w_td, noise_var)

    n_pts = config.n_steps + 1
    per_seed = np.full((len(seeds), n_pts), np.nan)
    finals = np.empty((len(seeds), n))
    diverged = [False] * len(seeds)
    etas = np.zeros(n_pts)
    etas[1:] = [eta_at(config.schedule, k) for k in range(1, n_pts)]

    for row, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        w = w0.copy()
        per_seed[row, 0] = measure(w)
        for it in range(1, n_pts):
            batch = source.sample(rng, config.batch_size)
            rewards = batch.rewards
            if config.shaping is not None:
                rewards = reshape_rewards(rewards, batch.features, config.shaping, config.gamma)
            if noise_std is not None:
                rewards = rewards.copy()
                rewards[:, :t_len] += noise_std * rng.standard_normal((config.batch_size, t_len))
            batch = batch._replace(rewards=rewards)
            w, _ = td_update_step(w, batch, etas[it], config.gamma)
            guard = value_error(w, reduced, w_td, noise_var)
            if not np.isfinite(guard) or guard > DIVERGENCE_THRESHOLD:
                diverged[row] = True
                per_seed[row, it] = guard if np.isfinite(guard) else np.nan
                break
            per_seed[row, it] = guard if evaluate is None else measure(w)
        finals[row] = w
    curve = LearningCurve(
        variant="sim", seeds=list(seeds), per_seed=per_seed, etas=etas, diverged=diverged
    )
    return RunResult(curve=curve, final_weights=finals)
