"""Spectral diagnostics: fixed points, eigenmodes of A, and tabular MDP solves.

The update matrix A = sigma_bar - gamma * sigma_plus is generally
non-symmetric, so its eigenvalues come in conjugate pairs and the per-mode
convergence of the mean weights is governed by |1 - eta lambda_k| with a
rotation by Arg(1 - eta lambda_k) per step. How fast the fixed point is
reached depends on how the target weights distribute over the slow modes,
summarized by the cumulative power distribution C(k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensembles import ReducedMatrices
from .errors import ConfigurationError, NumericalError

COND_LIMIT = 1e12
EIG_RESIDUAL_TOL = 1e-10


def td_fixed_point(reduced: ReducedMatrices, w_r: np.ndarray) -> np.ndarray:
    """Solve A w_TD = sigma_bar w_R (linear solve, no explicit inverse)."""
    a = reduced.A
    w_r = np.asarray(w_r, dtype=float)
    if w_r.shape != (a.shape[0],):
        raise ConfigurationError(f"w_R must have length {a.shape[0]}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(
            f"A is singular or ill-conditioned (cond {cond:.3e}); no TD fixed point"
        )
    return np.linalg.solve(a, reduced.sigma_bar @ w_r)


@dataclass(frozen=True)
class SpectralReport:
    """Eigen-analysis of A at a given learning rate.

    Modes are ordered by descending real part of the eigenvalue; conjugate
    pairs are adjacent with the positive-imaginary member first. ``power``
    holds the normalized share |w_k|^2 of the fixed point in each mode and
    ``cumulative_power`` its running sum C(k), with C at the last mode = 1.
    """

    eigenvalues: np.ndarray  # complex, (N,)
    eigenvectors: np.ndarray  # complex, (N, N), columns
    coefficients: np.ndarray  # complex, (N,), w_TD in the eigenbasis
    timescales: np.ndarray  # |1 - eta lambda_k|
    phases: np.ndarray  # Arg(1 - eta lambda_k)
    power: np.ndarray
    cumulative_power: np.ndarray
    eta: float


def spectral_report(a: np.ndarray, w_td: np.ndarray, eta: float) -> SpectralReport:
    """Full non-symmetric eigendecomposition of A with per-mode diagnostics."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError("A must be a square real matrix")
    w_td = np.asarray(w_td, dtype=float)
    if w_td.shape != (a.shape[0],):
        raise ConfigurationError("w_TD length must match A")
    eigvals, eigvecs = np.linalg.eig(a)
    order = np.lexsort((-eigvals.imag, -eigvals.real))
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    resid = np.linalg.norm(a @ eigvecs - eigvecs * eigvals, axis=0)
    resid /= np.linalg.norm(eigvecs, axis=0)
    if np.max(resid) > EIG_RESIDUAL_TOL:
        raise NumericalError(f"eigenpair residual {np.max(resid):.3e} exceeds tolerance")
    cond_u = np.linalg.cond(eigvecs)
    if not np.isfinite(cond_u) or cond_u > COND_LIMIT:
        raise NumericalError(
            f"eigenvector matrix is near-defective (cond {cond_u:.3e}); modes are not separable"
        )
    coeff = np.linalg.solve(eigvecs, w_td.astype(complex))
    power = np.abs(coeff) ** 2
    total = power.sum()
    if total > 0:
        power = power / total
    cumulative = np.cumsum(power)
    factors = 1.0 - eta * eigvals
    return SpectralReport(
        eigenvalues=eigvals,
        eigenvectors=eigvecs,
        coefficients=coeff,
        timescales=np.abs(factors),
        phases=np.angle(factors),
        power=power,
        cumulative_power=cumulative,
        eta=float(eta),
    )


def mean_weight_modes(
    report: SpectralReport, n: int, w0: np.ndarray, w_td: np.ndarray
) -> np.ndarray:
    """Mean weights after n steps, reconstructed mode by mode.

    Expands the deviation w0 - w_TD in the eigenbasis and decays each
    coefficient by (1 - eta lambda_k)^n; the literal sum over modes of the
    fixed point itself would decay to zero instead of settling at w_TD.
    """
    if n < 0:
        raise ConfigurationError("iteration must be nonnegative")
    w0 = np.asarray(w0, dtype=float)
    w_td = np.asarray(w_td, dtype=float)
    c = np.linalg.solve(report.eigenvectors, (w0 - w_td).astype(complex))
    dev = report.eigenvectors @ ((1.0 - report.eta * report.eigenvalues) ** n * c)
    if np.max(np.abs(dev.imag)) > 1e-10 * max(1.0, float(np.max(np.abs(dev.real)))):
        raise NumericalError("conjugate modes failed to cancel; imaginary residue too large")
    return w_td + dev.real


def spectral_report_rows(report: SpectralReport) -> list[dict]:
    """Rows for CSV export: k, re/im of lambda, timescale, power, C(k)."""
    rows = []
    for k in range(report.eigenvalues.shape[0]):
        rows.append(
            {
                "k": k + 1,
                "re_lambda": float(report.eigenvalues[k].real),
                "im_lambda": float(report.eigenvalues[k].imag),
                "timescale": float(report.timescales[k]),
                "power": float(report.power[k]),
                "cumulative_power": float(report.cumulative_power[k]),
            }
        )
    return rows


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with linear features: kernel Pi, visit weights p, features Psi, rewards R."""

    transition_matrix: np.ndarray
    visit_distribution: np.ndarray
    feature_matrix: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        pi = np.asarray(self.transition_matrix, dtype=float)
        p = np.asarray(self.visit_distribution, dtype=float)
        psi = np.asarray(self.feature_matrix, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        object.__setattr__(self, "transition_matrix", pi)
        object.__setattr__(self, "visit_distribution", p)
        object.__setattr__(self, "feature_matrix", psi)
        object.__setattr__(self, "rewards", r)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise ConfigurationError("transition matrix must be square")
        s = pi.shape[0]
        if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("transition matrix rows must be probability vectors")
        if p.shape != (s,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("visit distribution must be a probability vector")
        if psi.ndim != 2 or psi.shape[1] != s:
            raise ConfigurationError("feature matrix must have shape (n_features, n_states)")
        if r.shape != (s,):
            raise ConfigurationError("rewards must be a length-|S| vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")


@dataclass(frozen=True)
class TabularSolution:
    case: str  # "underparameterized" | "overparameterized"
    coefficients: np.ndarray  # w_TD (case 1) or kernel coefficients alpha (case 2)
    v_hat: np.ndarray
    v_true: np.ndarray
    irreducible_error: float


def _checked_solve(mat: np.ndarray, rhs: np.ndarray, label: str) -> np.ndarray:
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(f"{label} is singular or ill-conditioned (cond {cond:.3e})")
    return np.linalg.solve(mat, rhs)


def tabular_fixed_point(mdp: TabularMDP) -> TabularSolution:
    """Exact TD fixed point of a finite MDP, dispatched on the parameterization.

    With fewer features than states the fixed point is the p-weighted
    projected solve and carries an irreducible p-weighted value error; with
    at least as many features the kernel equation (I - gamma Pi) K alpha = R
    reproduces the true values exactly.
    """
    pi, p, psi, r = (
        mdp.transition_matrix,
        mdp.visit_distribution,
        mdp.feature_matrix,
        mdp.rewards,
    )
    s = pi.shape[0]
    n = psi.shape[0]
    eye = np.eye(s)
    v_true = _checked_solve(eye - mdp.gamma * pi, r, "(I - gamma Pi)")
    if n < s:
        weighted = psi * p
        a = weighted @ psi.T - mdp.gamma * (weighted @ pi @ psi.T)
        w_td = _checked_solve(a, weighted @ r, "projected TD matrix")
        v_hat = psi.T @ w_td
        err = float(p @ (v_hat - v_true) ** 2)
        return TabularSolution("underparameterized", w_td, v_hat, v_true, err)
    kernel = psi.T @ psi
    alpha = _checked_solve((eye - mdp.gamma * pi) @ kernel, r, "kernel system")
    v_hat = kernel @ alpha
    err = float(p @ (v_hat - v_true) ** 2)
    return TabularSolution("overparameterized", alpha, v_hat, v_true, err)
