"""Feature ensembles: episodic first and second moments, reduced matrices, serialization.

An ensemble describes the law of an episode of feature vectors psi(0..T) in R^N
through its mean mu(t) and the non-centered second moment Sigma(t,t') =
<psi(t) psi(t')^T>. Storing the raw second moment (not the centered covariance)
keeps every downstream recursion exact for nonzero-mean features.

Two concrete layouts are defined here. ``DenseEnsemble`` keeps the full
(T+1, T+1, N, N) tensor. ``DecoupledEnsemble`` keeps one scalar temporal kernel
per feature mode, Sigma_kl(t,t') = delta_kl c_k(t,t'), which makes every reduced
matrix diagonal and never needs densification. Finite-state chain ensembles live
in :mod:`tdcurves.gridworld` and plug into the same contraction interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericalError

# Equal-time blocks may pick up tiny negative eigenvalues from estimation noise.
PSD_TOL = 1e-10

# Refuse dense tensors above ~1 GiB; factored representations exist for a reason.
DENSE_ENTRY_LIMIT = 2**27


def _check_psd(block: np.ndarray, label: str) -> None:
    sym = 0.5 * (block + block.T)
    lo = float(np.linalg.eigvalsh(sym).min())
    if lo < -PSD_TOL:
        raise NumericalError(f"equal-time block {label} is not PSD (min eigenvalue {lo:.3e})")


class DenseEnsemble:
    """Full-tensor ensemble: mean (T+1, N) and second moment (T+1, T+1, N, N).

    Exchange symmetry Sigma_kl(t,t') = Sigma_lk(t',t) is enforced at
    construction and preserved by every operation.
    """

    representation = "dense"

    def __init__(self, mean: np.ndarray, second_moment: np.ndarray, validate: bool = True):
        mean = np.asarray(mean, dtype=float)
        second = np.asarray(second_moment, dtype=float)
        if mean.ndim != 2:
            raise ConfigurationError("mean must have shape (T+1, N)")
        tp1, n = mean.shape
        if second.shape != (tp1, tp1, n, n):
            raise ConfigurationError(
                f"second moment shape {second.shape} does not match mean shape {mean.shape}"
            )
        if tp1 < 2:
            raise ConfigurationError("need at least one transition (T >= 1)")
        if second.size > DENSE_ENTRY_LIMIT:
            raise ConfigurationError(
                "dense second-moment tensor too large; use a decoupled or finite-state representation"
            )
        self.mean = mean
        self.second = second
        self.n_features = n
        self.n_transitions = tp1 - 1
        if validate:
            self._validate()

    def _validate(self) -> None:
        tp1 = self.n_transitions + 1
        asym = np.max(np.abs(self.second - np.transpose(self.second, (1, 0, 3, 2))))
        if asym > 1e-10:
            raise NumericalError(f"exchange symmetry violated (max deviation {asym:.3e})")
        for t in range(tp1):
            _check_psd(self.second[t, t], f"Sigma({t},{t})")

    def sigma(self, a: int, b: int) -> np.ndarray:
        return self.second[a, b]

    def sigma_bar(self) -> np.ndarray:
        T = self.n_transitions
        out = self.second[range(T), range(T)].mean(axis=0)
        return 0.5 * (out + out.T)

    def sigma_plus(self) -> np.ndarray:
        T = self.n_transitions
        return self.second[range(T), range(1, T + 1)].mean(axis=0)

    def fro_grid(self, y: np.ndarray) -> np.ndarray:
        """All Frobenius contractions sum_kl Sigma_kl(a,b) Y_kl as a (T+1, T+1) grid."""
        return np.einsum("abij,ij->ab", self.second, y)

    def weighted_block_sum(self, weights: np.ndarray) -> np.ndarray:
        """sum_ab weights[a,b] Sigma(a,b), an N x N matrix."""
        return np.einsum("ab,abij->ij", weights, self.second)

    def sigma_apply(self, a: int, b: int, v: np.ndarray) -> np.ndarray:
        return self.second[a, b] @ v


class DecoupledEnsemble:
    """Per-mode temporal kernels c_k(t,t'); all cross-mode correlations vanish."""

    representation = "decoupled"

    def __init__(self, kernels: np.ndarray, mean: np.ndarray | None = None, validate: bool = True):
        kernels = np.asarray(kernels, dtype=float)
        if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
            raise ConfigurationError("kernels must have shape (N, T+1, T+1)")
        n, tp1, _ = kernels.shape
        if tp1 < 2:
            raise ConfigurationError("need at least one transition (T >= 1)")
        self.kernels = kernels
        self.mean = np.zeros((tp1, n)) if mean is None else np.asarray(mean, dtype=float)
        if self.mean.shape != (tp1, n):
            raise ConfigurationError("mean must have shape (T+1, N)")
        self.n_features = n
        self.n_transitions = tp1 - 1
        if validate:
            self._validate()

    def _validate(self) -> None:
        asym = np.max(np.abs(self.kernels - np.transpose(self.kernels, (0, 2, 1))))
        if asym > 1e-10:
            raise NumericalError(f"kernel exchange symmetry violated (max deviation {asym:.3e})")
        diag = self.kernels[:, range(self.n_transitions + 1), range(self.n_transitions + 1)]
        if np.any(diag <= 0.0):
            raise NumericalError("decoupled kernels must have positive equal-time values")
        # Each mode's (T+1)x(T+1) kernel must be PSD for the ensemble to be a valid law.
        for k in range(self.n_features):
            lo = float(np.linalg.eigvalsh(self.kernels[k]).min())
            if lo < -PSD_TOL:
                raise NumericalError(f"mode {k + 1} kernel is not PSD (min eigenvalue {lo:.3e})")

    def sigma(self, a: int, b: int) -> np.ndarray:
        return np.diag(self.kernels[:, a, b])

    def sigma_bar(self) -> np.ndarray:
        return np.diag(self.sigma_bar_diag())

    def sigma_plus(self) -> np.ndarray:
        return np.diag(self.sigma_plus_diag())

    def sigma_bar_diag(self) -> np.ndarray:
        T = self.n_transitions
        return self.kernels[:, range(T), range(T)].mean(axis=1)

    def sigma_plus_diag(self) -> np.ndarray:
        T = self.n_transitions
        return self.kernels[:, range(T), range(1, T + 1)].mean(axis=1)

    def fro_grid(self, y: np.ndarray) -> np.ndarray:
        return np.einsum("kab,k->ab", self.kernels, np.diagonal(y))

    def weighted_block_sum(self, weights: np.ndarray) -> np.ndarray:
        return np.diag(np.einsum("ab,kab->k", weights, self.kernels))

    def sigma_apply(self, a: int, b: int, v: np.ndarray) -> np.ndarray:
        return self.kernels[:, a, b] * v

    def densify(self) -> DenseEnsemble:
        n, tp1 = self.n_features, self.n_transitions + 1
        second = np.zeros((tp1, tp1, n, n))
        idx = np.arange(n)
        second[:, :, idx, idx] = np.transpose(self.kernels, (1, 2, 0))
        return DenseEnsemble(self.mean, second)


@dataclass(frozen=True)
class ReducedMatrices:
    """Episode-averaged matrices driving the weight dynamics.

    sigma_bar = (1/T) sum_t Sigma(t,t), sigma_plus = (1/T) sum_t Sigma(t,t+1),
    A = sigma_bar - gamma * sigma_plus. The identity A + gamma*sigma_plus ==
    sigma_bar holds exactly because A is defined by it.
    """

    sigma_bar: np.ndarray
    sigma_plus: np.ndarray
    A: np.ndarray
    gamma: float


def reduced_matrices(ensemble, gamma: float) -> ReducedMatrices:
    """Form the reduced matrices for a discount in [0, 1)."""
    if not 0.0 <= gamma < 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1), got {gamma}")
    sbar = ensemble.sigma_bar()
    _check_psd(sbar, "sigma_bar")
    splus = ensemble.sigma_plus()
    return ReducedMatrices(sigma_bar=sbar, sigma_plus=splus, A=sbar - gamma * splus, gamma=float(gamma))


def build_powerlaw_ensemble(
    n_features: int,
    n_transitions: int,
    spectral_exponent: float,
    target_exponent: float,
) -> tuple[DecoupledEnsemble, np.ndarray]:
    """Decoupled power-law ensemble with exponential temporal kernels.

    Mode k in 1..N has kernel c_k(t,t') = k^-a exp(-|t-t'| / tau_k) with
    tau_k = 10/(k+1), and the reward weight w_R[k] = k^-b. Returns the ensemble
    together with w_R.
    """
    if n_features < 1 or n_transitions < 1:
        raise ConfigurationError("need n_features >= 1 and n_transitions >= 1")
    if spectral_exponent <= 0 or target_exponent <= 0:
        raise ConfigurationError("power-law exponents must be positive")
    k = np.arange(1, n_features + 1, dtype=float)
    tau = 10.0 / (k + 1.0)
    t = np.arange(n_transitions + 1, dtype=float)
    lags = np.abs(t[:, None] - t[None, :])
    kernels = (k**-spectral_exponent)[:, None, None] * np.exp(-lags[None, :, :] / tau[:, None, None])
    w_r = k**-target_exponent
    return DecoupledEnsemble(kernels), w_r


def hypercube_ensemble(n_features: int, n_transitions: int) -> DecoupledEnsemble:
    """Ensemble of +-1 coordinates i.i.d. across features and episode times."""
    if n_features < 1 or n_transitions < 1:
        raise ConfigurationError("need n_features >= 1 and n_transitions >= 1")
    tp1 = n_transitions + 1
    kernels = np.broadcast_to(np.eye(tp1), (n_features, tp1, tp1)).copy()
    return DecoupledEnsemble(kernels)


def estimate_ensemble(source, n_traj: int, seed: int) -> DenseEnsemble:
    """Empirical mean and second moment over sampled episodes, stored densely.

    Blocks are symmetrized exactly: only t <= t' is accumulated and the lower
    triangle is filled with transposes, so the exchange invariant holds to the
    last bit.
    """
    if n_traj < 1:
        raise ConfigurationError("n_traj must be at least 1")
    n, tp1 = source.n_features, source.n_transitions + 1
    if tp1 * tp1 * n * n > DENSE_ENTRY_LIMIT:
        raise ConfigurationError(
            "estimated dense ensemble would be too large; use exact factored moments instead"
        )
    rng = np.random.default_rng(seed)
    mean = np.zeros((tp1, n))
    second = np.zeros((tp1, tp1, n, n))
    remaining = n_traj
    while remaining > 0:
        chunk = min(remaining, 256)
        feats = source.sample(rng, chunk).features
        mean += feats.sum(axis=0)
        second += np.einsum("mai,mbj->abij", feats, feats)
        remaining -= chunk
    mean /= n_traj
    second /= n_traj
    for a in range(tp1):
        second[a, a] = 0.5 * (second[a, a] + second[a, a].T)
        for b in range(a + 1, tp1):
            second[b, a] = second[a, b].T
    return DenseEnsemble(mean, second)


def save_ensemble(ensemble, path: str | Path, reward_weights: np.ndarray | None = None) -> None:
    """Write an ensemble container (.ens.json or .ens.bin).

    The container records {format, N, T, representation, mean, covariance
    arrays} plus an optional reward_weights entry so file-backed experiments
    carry their target. Finite-state ensembles store their natural payload
    under the "markov" tag.
    """
    path = Path(path)
    payload: dict = {
        "format": "tdcurves-ensemble-v1",
        "n_features": int(ensemble.n_features),
        "n_transitions": int(ensemble.n_transitions),
        "representation": ensemble.representation,
    }
    arrays: dict[str, np.ndarray] = {}
    if ensemble.representation == "dense":
        arrays = {"mean": ensemble.mean, "second_moment": ensemble.second}
    elif ensemble.representation == "decoupled":
        arrays = {"mean": ensemble.mean, "kernels": ensemble.kernels}
    elif ensemble.representation == "markov":
        arrays = {
            "transition_matrix": ensemble.transition_matrix,
            "feature_matrix": ensemble.feature_matrix,
            "start_distribution": ensemble.start_distribution,
        }
    else:
        raise ConfigurationError(f"cannot serialize representation {ensemble.representation!r}")
    if reward_weights is not None:
        arrays["reward_weights"] = np.asarray(reward_weights, dtype=float)

    if path.suffix == ".json" or path.name.endswith(".ens.json"):
        payload["arrays"] = {k: v.tolist() for k, v in arrays.items()}
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(payload))
        tmp.replace(path)
    else:
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(payload).encode(), dtype=np.uint8), **arrays)
        tmp.replace(path)


def load_ensemble(path: str | Path):
    """Read a container written by :func:`save_ensemble`.

    Returns (ensemble, reward_weights_or_None).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"ensemble file not found: {path}")
    if path.name.endswith(".ens.json") or path.suffix == ".json":
        payload = json.loads(path.read_text())
        arrays = {k: np.asarray(v, dtype=float) for k, v in payload["arrays"].items()}
    else:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
        payload = meta
    if payload.get("format") != "tdcurves-ensemble-v1":
        raise ConfigurationError(f"unrecognized ensemble container: {path}")
    rep = payload["representation"]
    w_r = arrays.pop("reward_weights", None)
    if rep == "dense":
        ens = DenseEnsemble(arrays["mean"], arrays["second_moment"])
    elif rep == "decoupled":
        ens = DecoupledEnsemble(arrays["kernels"], arrays.get("mean"))
    elif rep == "markov":
        from .gridworld import MarkovChainEnsemble

        ens = MarkovChainEnsemble(
            arrays["transition_matrix"],
            arrays["feature_matrix"],
            arrays["start_distribution"],
            payload["n_transitions"],
        )
    else:
        raise ConfigurationError(f"unknown representation tag {rep!r} in {path}")
    return ens, w_r
