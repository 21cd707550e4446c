"""Deterministic learning-curve predictions for batched online TD(0).

All recursions track the first two moments of the weight vector over runs:
the mean deviation d_n = <w_n> - w* and the second moment about the fixed
point, M_n = <(w_n - w*)(w_n - w*)^T>, where w* is the TD fixed point w_TD
(shifted by the shaping potential when one is configured). The TD-error
correlation Q_n(t,t') = <Delta_n(t) Delta_n(t')> is recomputed from (d, M)
each step; the batch noise feeds back into M as
(eta^2 / (T^2 B)) sum_tt' Q_n(t,t') Sigma(t,t').

Three levels of closure are provided. ``dmft_curve`` is the Gaussian
mean-field recursion; ``direct_recurrence_curve`` keeps the finite-size
cross terms that the mean field drops; ``nongaussian_curve`` is the exact
finite-(N, B) recursion, closed by a fourth-moment model of the features.

Decoupled ensembles get a fast path: every Sigma(t,t') is diagonal, so the
diagonal of M evolves autonomously and the loss needs nothing else. The
off-diagonal part of M_0 never couples into the diagonal or the loss and is
dropped there; the dense path is the reference implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensembles import DecoupledEnsemble, ReducedMatrices, reduced_matrices
from .errors import ConfigurationError, NumericalError
from .simulator import LearnerConfig, LearningCurve, eta_at
from .spectral import td_fixed_point

FIXED_POINT_TOL = 1e-12
FIXED_POINT_CAP = 10**6
EXPLICIT_TENSOR_LIMIT = 64


@dataclass
class MomentState:
    """Moments of the weight ensemble at one iteration.

    ``M`` is the full N x N second moment about w*, or its diagonal as a
    length-N vector on the decoupled fast path. ``Q`` holds the T x T TD-error
    correlation that produced this state (None for an initial state).
    """

    mean_w: np.ndarray
    M: np.ndarray
    Q: np.ndarray | None
    iteration: int


@dataclass(frozen=True)
class FourthMomentModel:
    """Fourth moments of the features, explicit or as a closed family.

    ``explicit`` carries the flattened tensor S4[p,q,r,s] = <x_p x_q x_r x_s>
    with x the (T+1)*N vector of features in (time, index) order. The closed
    tags evaluate the same contractions analytically: ``gaussian_wick`` by
    pairings of second moments (zero-mean ensembles only), ``hypercube`` for
    features i.i.d. uniform on {-1, +1} across indices and times.
    """

    kind: str
    tensor: np.ndarray | None = None
    n_features: int = 0

    @classmethod
    def gaussian_wick(cls) -> "FourthMomentModel":
        return cls(kind="gaussian_wick")

    @classmethod
    def hypercube(cls) -> "FourthMomentModel":
        return cls(kind="hypercube")

    @classmethod
    def explicit(cls, tensor: np.ndarray, n_features: int) -> "FourthMomentModel":
        tensor = np.asarray(tensor, dtype=float)
        if tensor.ndim != 4 or len(set(tensor.shape)) != 1:
            raise ConfigurationError("fourth-moment tensor must be 4-way with equal axes")
        if tensor.shape[0] > EXPLICIT_TENSOR_LIMIT:
            raise ConfigurationError(
                f"explicit tensor dimension {tensor.shape[0]} exceeds the "
                f"{EXPLICIT_TENSOR_LIMIT} cap; use a closed family"
            )
        # Transpositions of adjacent axes generate the full symmetric group.
        for axes in ((1, 0, 2, 3), (0, 2, 1, 3), (0, 1, 3, 2)):
            if np.max(np.abs(tensor - tensor.transpose(axes))) > 1e-10:
                raise ConfigurationError("fourth-moment tensor is not permutation symmetric")
        return cls(kind="explicit", tensor=tensor, n_features=int(n_features))


def gaussian_fourth_tensor(ensemble) -> FourthMomentModel:
    """Exact fourth moments of a zero-mean Gaussian ensemble, enumerated densely."""
    tp1, n = ensemble.n_transitions + 1, ensemble.n_features
    dim = tp1 * n
    if dim > EXPLICIT_TENSOR_LIMIT:
        raise ConfigurationError(f"flattened dimension {dim} too large for an explicit tensor")
    if np.max(np.abs(ensemble.mean)) > 1e-12:
        raise ConfigurationError("Wick enumeration requires a zero-mean ensemble")
    cov = np.empty((dim, dim))
    for a in range(tp1):
        for b in range(tp1):
            cov[a * n : (a + 1) * n, b * n : (b + 1) * n] = ensemble.sigma(a, b)
    s4 = (
        np.einsum("pq,rs->pqrs", cov, cov)
        + np.einsum("pr,qs->pqrs", cov, cov)
        + np.einsum("ps,qr->pqrs", cov, cov)
    )
    return FourthMomentModel.explicit(s4, n)


def hypercube_fourth_tensor(n_features: int, n_transitions: int) -> FourthMomentModel:
    """Exact fourth moments of i.i.d. +-1 features, enumerated densely."""
    dim = n_features * (n_transitions + 1)
    if dim > EXPLICIT_TENSOR_LIMIT:
        raise ConfigurationError(f"flattened dimension {dim} too large for an explicit tensor")
    eye = np.eye(dim)
    s4 = (
        np.einsum("pq,rs->pqrs", eye, eye)
        + np.einsum("pr,qs->pqrs", eye, eye)
        + np.einsum("ps,qr->pqrs", eye, eye)
    )
    idx = np.arange(dim)
    s4[idx, idx, idx, idx] -= 2.0
    return FourthMomentModel.explicit(s4, n_features)


def _weight_blocks(d: np.ndarray, m: np.ndarray, rho_star: np.ndarray, w_td: np.ndarray):
    """Second moments of the TD-error coefficient vectors.

    Delta(t) = psi(t).(rho* - u) + gamma psi(t+1).(w_TD + u) with u = w - w*,
    so Q needs <(rho*-u)(rho*-u)^T>, <(rho*-u)(w_TD+u)^T>, <(w_TD+u)(w_TD+u)^T>.
    """
    rho = np.outer(rho_star, rho_star) - np.outer(rho_star, d) - np.outer(d, rho_star) + m
    x = np.outer(rho_star, w_td) + np.outer(rho_star, d) - np.outer(d, w_td) - m
    w = np.outer(w_td, w_td) + np.outer(w_td, d) + np.outer(d, w_td) + m
    return rho, x, w


def _q_from_grids(gr, gx, gw, gamma: float, t_len: int, sigma2: np.ndarray | None):
    e = gx[:t_len, 1:]
    q = gr[:t_len, :t_len] + gamma * (e + e.T) + gamma**2 * gw[1:, 1:]
    if sigma2 is not None:
        q = q + np.diag(sigma2)
    return q


def td_error_correlation(
    ensemble,
    gamma: float,
    mean_w: np.ndarray,
    m: np.ndarray,
    w_r: np.ndarray,
    w_td: np.ndarray,
    shaping: np.ndarray | None = None,
    action_noise: np.ndarray | float | None = None,
) -> np.ndarray:
    """T x T correlation of TD errors under the Gaussian feature model.

    ``m`` is the second moment of w about w* = w_TD (+ shaping); ``mean_w``
    is the raw weight mean. Symmetric by construction.
    """
    w_star = w_td if shaping is None else w_td + shaping
    d = np.asarray(mean_w, dtype=float) - w_star
    rho_star = w_r - w_td
    rho, x, w = _weight_blocks(d, np.asarray(m, dtype=float), rho_star, w_td)
    t_len = ensemble.n_transitions
    sigma2 = None
    if action_noise is not None:
        sigma2 = np.broadcast_to(np.asarray(action_noise, dtype=float), (t_len,))
    return _q_from_grids(
        ensemble.fro_grid(rho), ensemble.fro_grid(x), ensemble.fro_grid(w), gamma, t_len, sigma2
    )


def _check_positivity(m_diag_min: float, q_diag_min: float, scale: float, n: int, variant: str):
    tol = max(1e-10, 1e-13 * scale)
    if not np.isfinite(m_diag_min) or not np.isfinite(q_diag_min):
        raise NumericalError(f"{variant} recursion produced non-finite moments at iteration {n}")
    if m_diag_min < -tol or q_diag_min < -tol:
        raise NumericalError(
            f"{variant} recursion lost positivity at iteration {n} "
            f"(min M diag {m_diag_min:.3e}, min Q diag {q_diag_min:.3e})"
        )


def _pad_transition_grid(q: np.ndarray, tp1: int) -> np.ndarray:
    out = np.zeros((tp1, tp1))
    out[: q.shape[0], : q.shape[1]] = q
    return out


def _wick_noise(blocks, rho, x, w, gamma: float, t_len: int) -> np.ndarray:
    """sum_tt' of Wick-paired fourth-moment contractions, for zero-mean Gaussians."""
    n = rho.shape[0]
    total = np.zeros((n, n))
    pieces = ((1.0, rho, 0, 0), (gamma, x, 0, 1), (gamma, x.T, 1, 0), (gamma**2, w, 1, 1))
    for t in range(t_len):
        for tp in range(t_len):
            for coef, y, o1, o2 in pieces:
                if coef == 0.0:
                    continue
                t3, t4 = t + o1, tp + o2
                total += coef * (
                    blocks[t][tp] * np.sum(blocks[t3][t4] * y)
                    + blocks[t][t3] @ y @ blocks[tp][t4].T
                    + blocks[t][t4] @ y.T @ blocks[tp][t3].T
                )
    return total


def _hypercube_noise(rho, w, gamma: float, t_len: int) -> np.ndarray:
    """Closed-form sum_tt' fourth-moment contraction for i.i.d. +-1 features.

    Temporal independence kills every gamma-linear cross term; only the
    equal-time pairings of the rho block and the trace of the w block survive.
    """
    n = rho.shape[0]
    eye = np.eye(n)
    return (
        t_len**2 * rho
        + t_len * np.trace(rho) * eye
        + t_len * rho.T
        - 2.0 * t_len * np.diag(np.diag(rho))
        + gamma**2 * t_len * np.trace(w) * eye
    )


def _explicit_noise(tensor, n: int, rho, x, w, gamma: float, t_len: int) -> np.ndarray:
    def contract(t1, t2, t3, t4, y):
        view = tensor[
            t1 * n : (t1 + 1) * n, t2 * n : (t2 + 1) * n, t3 * n : (t3 + 1) * n, t4 * n : (t4 + 1) * n
        ]
        return np.einsum("ijkl,kl->ij", view, y)

    total = np.zeros((n, n))
    for t in range(t_len):
        for tp in range(t_len):
            total += contract(t, tp, t, tp, rho)
            if gamma != 0.0:
                total += gamma * contract(t, tp, t, tp + 1, x)
                total += gamma * contract(t, tp, t + 1, tp, x.T)
                total += gamma**2 * contract(t, tp, t + 1, tp + 1, w)
    return total


def _validate_fourth(fourth: FourthMomentModel, ensemble) -> None:
    tp1, n = ensemble.n_transitions + 1, ensemble.n_features
    if fourth.kind == "explicit":
        if fourth.n_features != n or fourth.tensor.shape[0] != tp1 * n:
            raise ConfigurationError("explicit fourth-moment tensor does not match the ensemble")
    elif fourth.kind == "gaussian_wick":
        if np.max(np.abs(ensemble.mean)) > 1e-12:
            raise ConfigurationError("Wick closure requires a zero-mean ensemble")
    elif fourth.kind == "hypercube":
        ok = (
            ensemble.representation == "decoupled"
            and np.max(np.abs(ensemble.kernels - np.eye(tp1)[None])) <= 1e-12
            and np.max(np.abs(ensemble.mean)) <= 1e-12
        )
        if not ok:
            raise ConfigurationError(
                "hypercube closure applies only to the i.i.d. unit-kernel ensemble"
            )
    else:
        raise ConfigurationError(f"unknown fourth-moment model {fourth.kind!r}")


def dmft_step(
    state: MomentState,
    reduced: ReducedMatrices,
    ensemble,
    w_r: np.ndarray,
    w_td: np.ndarray,
    eta: float,
    alpha: float,
    gamma: float,
    shaping: np.ndarray | None = None,
    action_noise: np.ndarray | float | None = None,
) -> MomentState:
    """One Gaussian mean-field update of (mean, M); alpha = B/N sets the noise.

    The mean contracts as <w'> = <w> + eta A (w* - <w>); M picks up the
    squared contraction plus the Q-weighted feature noise. alpha = inf turns
    the noise off entirely.
    """
    if eta <= 0:
        raise ConfigurationError("eta must be positive")
    n = ensemble.n_features
    t_len = ensemble.n_transitions
    b_inv = 0.0 if np.isinf(alpha) else 1.0 / (alpha * n)
    w_star = w_td if shaping is None else w_td + shaping
    d = np.asarray(state.mean_w, dtype=float) - w_star
    m = np.asarray(state.M, dtype=float)
    if m.ndim == 1:
        m = np.diag(m)
    rho_star = w_r - w_td
    sigma2 = None
    if action_noise is not None:
        sigma2 = np.broadcast_to(np.asarray(action_noise, dtype=float), (t_len,))
    rho, x, w = _weight_blocks(d, m, rho_star, w_td)
    q = _q_from_grids(
        ensemble.fro_grid(rho), ensemble.fro_grid(x), ensemble.fro_grid(w), gamma, t_len, sigma2
    )
    a_mat = reduced.A
    half = m - eta * (a_mat @ m)
    m_next = half - eta * (half @ a_mat.T)
    if b_inv > 0.0:
        m_next = m_next + (eta**2 * b_inv / t_len**2) * ensemble.weighted_block_sum(
            _pad_transition_grid(q, t_len + 1)
        )
    m_next = 0.5 * (m_next + m_next.T)
    d_next = d - eta * (a_mat @ d)
    _check_positivity(
        float(np.min(np.diag(m_next))),
        float(np.min(np.diag(q))),
        float(np.max(np.abs(m_next))),
        state.iteration + 1,
        "dmft",
    )
    return MomentState(mean_w=w_star + d_next, M=m_next, Q=q, iteration=state.iteration + 1)


def _resolve_run(ensemble, w_r, config: LearnerConfig):
    """Shared setup: reduced matrices, fixed point, initial deviation, noise."""
    n = ensemble.n_features
    w_r = np.asarray(w_r, dtype=float)
    if w_r.shape != (n,):
        raise ConfigurationError(f"w_r must have length {n}")
    red = reduced_matrices(ensemble, config.gamma)
    w_td = td_fixed_point(red, w_r)
    w0 = np.zeros(n) if config.w0 is None else np.asarray(config.w0, dtype=float)
    if w0.shape != (n,):
        raise ConfigurationError(f"w0 must have length {n}")
    shaping = None if config.shaping is None else np.asarray(config.shaping, dtype=float)
    if shaping is not None and shaping.shape != (n,):
        raise ConfigurationError(f"shaping potential must have length {n}")
    w_star = w_td if shaping is None else w_td + shaping
    t_len = ensemble.n_transitions
    sigma2 = None
    floor = 0.0
    if config.action_noise is not None:
        sigma2 = np.broadcast_to(
            np.asarray(config.action_noise, dtype=float), (t_len,)
        ).astype(float)
        if np.any(sigma2 < 0):
            raise ConfigurationError("action noise variances must be nonnegative")
        floor = float(sigma2.mean())
    return red, w_td, w0, shaping, w_star, sigma2, floor


def _theory_curve_result(variant, losses, etas):
    return LearningCurve(
        variant=variant, seeds=[], per_seed=losses[None, :], etas=etas, diverged=[False]
    )


def _etas_for(config: LearnerConfig) -> np.ndarray:
    etas = np.zeros(config.n_steps + 1)
    etas[1:] = [eta_at(config.schedule, k) for k in range(1, config.n_steps + 1)]
    return etas


def _record(trace_every, n, n_steps):
    return n == n_steps or (trace_every is not None and n % trace_every == 0)


def _dense_curve(
    ensemble,
    w_r,
    config: LearnerConfig,
    variant: str,
    fourth: FourthMomentModel | None,
    infinite_batch: bool,
    trace_every: int | None,
):
    red, w_td, w0, shaping, w_star, sigma2, floor = _resolve_run(ensemble, w_r, config)
    n = ensemble.n_features
    t_len = ensemble.n_transitions
    b_inv = 0.0 if infinite_batch else 1.0 / config.batch_size
    gamma = config.gamma
    a_mat = red.A
    rho_star = w_r - w_td
    noise_sigma = None
    if sigma2 is not None:
        acc = np.zeros((n, n))
        for t in range(t_len):
            acc += sigma2[t] * ensemble.sigma(t, t)
        noise_sigma = acc

    blocks = None
    if variant == "nongauss" and fourth.kind == "gaussian_wick":
        tp1 = t_len + 1
        blocks = [[ensemble.sigma(a, b) for b in range(tp1)] for a in range(tp1)]

    d = w0 - w_star
    m = np.outer(d, d)
    etas = _etas_for(config)
    losses = np.empty(config.n_steps + 1)
    losses[0] = float(np.sum(red.sigma_bar * m)) / n + floor
    trace = [MomentState(mean_w=w_star + d, M=m.copy(), Q=None, iteration=0)]
    for it in range(1, config.n_steps + 1):
        eta = etas[it]
        rho, x, w = _weight_blocks(d, m, rho_star, w_td)
        q = _q_from_grids(
            ensemble.fro_grid(rho), ensemble.fro_grid(x), ensemble.fro_grid(w),
            gamma, t_len, sigma2,
        )
        if variant == "nongauss":
            half = m - eta * (a_mat @ m)
            m_next = half - eta * (half @ a_mat.T) - (eta**2 * b_inv) * (a_mat @ m @ a_mat.T)
            if b_inv > 0.0:
                if fourth.kind == "hypercube":
                    noise = _hypercube_noise(rho, w, gamma, t_len)
                elif fourth.kind == "gaussian_wick":
                    noise = _wick_noise(blocks, rho, x, w, gamma, t_len)
                else:
                    noise = _explicit_noise(fourth.tensor, n, rho, x, w, gamma, t_len)
                m_next = m_next + (eta**2 * b_inv / t_len**2) * noise
        else:
            half = m - eta * (a_mat @ m)
            m_next = half - eta * (half @ a_mat.T)
            if b_inv > 0.0:
                m_next = m_next + (eta**2 * b_inv / t_len**2) * ensemble.weighted_block_sum(
                    _pad_transition_grid(q, t_len + 1)
                )
            if variant == "direct" and b_inv > 0.0:
                a_vec = rho_star - d
                b_vec = w_td + d
                marr = np.empty((t_len, t_len, n))
                for i in range(t_len):
                    for j in range(t_len):
                        marr[i, j] = ensemble.sigma_apply(j, i, a_vec) + gamma * ensemble.sigma_apply(
                            j, i + 1, b_vec
                        )
                cross = np.einsum("ijn,jim->nm", marr, marr)
                m_next = m_next + (eta**2 * b_inv) * (
                    cross / t_len**2 - a_mat @ m @ a_mat.T
                )
        if variant == "nongauss" and b_inv > 0.0 and noise_sigma is not None:
            m_next = m_next + (eta**2 * b_inv / t_len**2) * noise_sigma
        m = 0.5 * (m_next + m_next.T)
        d = d - eta * (a_mat @ d)
        _check_positivity(
            float(np.min(np.diag(m))), float(np.min(np.diag(q))),
            float(np.max(np.abs(m))), it, variant,
        )
        losses[it] = float(np.sum(red.sigma_bar * m)) / n + floor
        if losses[it] > 1e12:
            raise NumericalError(f"{variant} recursion diverged at iteration {it}")
        if _record(trace_every, it, config.n_steps):
            trace.append(MomentState(mean_w=w_star + d, M=m.copy(), Q=q, iteration=it))
    return _theory_curve_result(variant, losses, etas), trace


def _decoupled_curve(
    ensemble: DecoupledEnsemble,
    w_r,
    config: LearnerConfig,
    variant: str,
    infinite_batch: bool,
    trace_every: int | None,
):
    """Diagonal-only engine; exact for the loss on decoupled ensembles."""
    red, w_td, w0, shaping, w_star, sigma2, floor = _resolve_run(ensemble, w_r, config)
    n = ensemble.n_features
    t_len = ensemble.n_transitions
    b_inv = 0.0 if infinite_batch else 1.0 / config.batch_size
    gamma = config.gamma

    kern = ensemble.kernels
    ca = kern[:, :t_len, :t_len]
    cb = kern[:, :t_len, 1:]
    cd = kern[:, 1:, 1:]
    cbs = cb + np.transpose(kern[:, 1:, :t_len], (0, 2, 1))  # c(t,t'+1) + c(t+1,t')
    rng_t = np.arange(t_len)
    ca_tt = ca[:, rng_t, rng_t]
    cbs_tt = cbs[:, rng_t, rng_t]
    cd_tt = cd[:, rng_t, rng_t]
    sbar = ensemble.sigma_bar_diag()
    a_diag = sbar - gamma * ensemble.sigma_plus_diag()
    # Gram matrices turn the Q contraction into two N x N matvecs per step.
    p1 = np.einsum("jab,kab->jk", ca, ca)
    p2 = np.einsum("jab,kab->jk", ca, cbs)
    p3 = np.einsum("jab,kab->jk", ca, cd)
    s_noise = None
    if sigma2 is not None:
        s_noise = np.einsum("jtt,t->j", ca, sigma2)
    if variant == "direct":
        s1 = np.einsum("jab,jba->j", ca, ca)
        s2 = np.einsum("jab,jba->j", ca, cb)
        s4 = np.einsum("jab,jba->j", cb, cb)

    rho_star = w_r - w_td
    v = w_td
    d = w0 - w_star
    m = d * d
    etas = _etas_for(config)
    losses = np.empty(config.n_steps + 1)
    losses[0] = float(sbar @ m) / n + floor

    def q_full(rho_d, x_d, w_d):
        q = np.einsum("k,kab->ab", rho_d, ca)
        q += gamma * np.einsum("k,kab->ab", x_d, cbs)
        q += gamma**2 * np.einsum("k,kab->ab", w_d, cd)
        if sigma2 is not None:
            q += np.diag(sigma2)
        return q

    trace = [MomentState(mean_w=w_star + d, M=m.copy(), Q=None, iteration=0)]
    for it in range(1, config.n_steps + 1):
        eta = etas[it]
        rho_d = rho_star**2 - 2.0 * rho_star * d + m
        x_d = rho_star * v + rho_star * d - d * v - m
        w_d = v**2 + 2.0 * v * d + m
        m_next = (1.0 - eta * a_diag) ** 2 * m
        if b_inv > 0.0:
            pref = eta**2 * b_inv / t_len**2
            noise = p1 @ rho_d + gamma * (p2 @ x_d) + gamma**2 * (p3 @ w_d)
            if s_noise is not None:
                noise = noise + s_noise
            m_next = m_next + pref * noise
            if variant == "direct":
                alpha_v = rho_star - d
                beta_v = v + d
                cross = (
                    alpha_v**2 * s1
                    + 2.0 * gamma * alpha_v * beta_v * s2
                    + gamma**2 * beta_v**2 * s4
                )
                m_next = m_next + eta**2 * b_inv * (cross / t_len**2 - a_diag**2 * m)
        d = (1.0 - eta * a_diag) * d
        m = m_next
        q_diag = rho_d @ ca_tt + gamma * (x_d @ cbs_tt) + gamma**2 * (w_d @ cd_tt)
        if sigma2 is not None:
            q_diag = q_diag + sigma2
        _check_positivity(
            float(np.min(m)), float(np.min(q_diag)), float(np.max(np.abs(m))), it, variant
        )
        losses[it] = float(sbar @ m) / n + floor
        if losses[it] > 1e12:
            raise NumericalError(f"{variant} recursion diverged at iteration {it}")
        if _record(trace_every, it, config.n_steps):
            trace.append(
                MomentState(mean_w=w_star + d, M=m.copy(), Q=q_full(rho_d, x_d, w_d), iteration=it)
            )
    return _theory_curve_result(variant, losses, etas), trace


def _dispatch_curve(ensemble, w_r, config, variant, fourth=None, infinite_batch=False,
                    trace_every=None):
    if variant in ("dmft", "direct") and ensemble.representation == "decoupled":
        return _decoupled_curve(ensemble, w_r, config, variant, infinite_batch, trace_every)
    return _dense_curve(ensemble, w_r, config, variant, fourth, infinite_batch, trace_every)


def dmft_curve(ensemble, w_r, config: LearnerConfig, infinite_batch: bool = False,
               trace_every: int | None = None):
    """Gaussian mean-field learning curve; returns (LearningCurve, moment trace).

    The trace always contains the initial and final states; pass trace_every
    to also record every k-th iteration (full traces at N=300 and 3e4 steps
    would be gigabytes).
    """
    return _dispatch_curve(ensemble, w_r, config, "dmft",
                           infinite_batch=infinite_batch, trace_every=trace_every)


def direct_recurrence_curve(ensemble, w_r, config: LearnerConfig, infinite_batch: bool = False,
                            trace_every: int | None = None):
    """Mean-field curve keeping the 1/B cross terms the closure drops.

    Per step the extra content is eta^2/B times (the outer product of the
    mean TD-error/feature overlaps minus A M A^T); it vanishes as B grows.
    """
    return _dispatch_curve(ensemble, w_r, config, "direct",
                           infinite_batch=infinite_batch, trace_every=trace_every)


def nongaussian_curve(fourth: FourthMomentModel, ensemble, w_r, config: LearnerConfig,
                      infinite_batch: bool = False, trace_every: int | None = None):
    """Exact finite-(N, B) expected loss under a fourth-moment closure."""
    _validate_fourth(fourth, ensemble)
    return _dense_curve(ensemble, w_r, config, "nongauss", fourth, infinite_batch, trace_every)


def hypercube_closed_form(n_features: int, batch_size: int, eta: float, n: int):
    """Closed-form losses after n steps for the i.i.d. +-1 and Gaussian families.

    Both normalize L_0 = 1; the hypercube's negative excess kurtosis shows up
    as (N-1)/B against the Gaussian (N+1)/B. They coincide as N -> inf at
    fixed B/N.
    """
    if n_features < 1 or batch_size < 1 or eta < 0 or n < 0:
        raise ConfigurationError("closed form needs positive sizes and nonnegative eta, n")
    base = (1.0 - eta) ** 2
    hyp = (base + eta**2 * (n_features - 1) / batch_size) ** n
    gauss = (base + eta**2 * (n_features + 1) / batch_size) ** n
    return hyp, gauss


def fixed_point_plateau(ensemble, w_r, gamma: float, eta: float, batch_size: int):
    """Self-consistent plateau of the mean-field recursion at constant eta.

    Pins the mean at w_TD and iterates the M update until the largest entry
    moves by less than 1e-12. Returns (M*, L*, iterations). The plateau scales
    like eta * gamma^2 / B in the small-eta regime.
    """
    if eta <= 0 or batch_size < 1:
        raise ConfigurationError("need eta > 0 and batch_size >= 1")
    n = ensemble.n_features
    t_len = ensemble.n_transitions
    red = reduced_matrices(ensemble, gamma)
    w_td = td_fixed_point(red, np.asarray(w_r, dtype=float))
    rho_star = np.asarray(w_r, dtype=float) - w_td
    a_mat = red.A
    radius = float(np.max(np.abs(np.linalg.eigvals(np.eye(n) - eta * a_mat))))
    if radius >= 1.0:
        raise ConfigurationError(
            f"spectral radius of (I - eta A) is {radius:.6f}; the recursion cannot settle"
        )
    pref = eta**2 / (t_len**2 * batch_size)

    if ensemble.representation == "decoupled":
        kern = ensemble.kernels
        ca = kern[:, :t_len, :t_len]
        cbs = kern[:, :t_len, 1:] + np.transpose(kern[:, 1:, :t_len], (0, 2, 1))
        cd = kern[:, 1:, 1:]
        p1 = np.einsum("jab,kab->jk", ca, ca)
        p2 = np.einsum("jab,kab->jk", ca, cbs)
        p3 = np.einsum("jab,kab->jk", ca, cd)
        sbar = ensemble.sigma_bar_diag()
        a_diag = sbar - gamma * ensemble.sigma_plus_diag()
        v = w_td
        fmat = np.diag((1.0 - eta * a_diag) ** 2) + pref * (p1 - gamma * p2 + gamma**2 * p3)
        const = pref * (p1 @ rho_star**2 + gamma * (p2 @ (rho_star * v)) + gamma**2 * (p3 @ v**2))
        m = np.zeros(n)
        for it in range(1, FIXED_POINT_CAP + 1):
            m_next = fmat @ m + const
            res = float(np.max(np.abs(m_next - m)))
            m = m_next
            if res < FIXED_POINT_TOL:
                l_star = float(sbar @ m) / n
                return np.diag(m), l_star, it
        raise NumericalError(f"plateau iteration did not converge (last residual {res:.3e})")

    m = np.zeros((n, n))
    for it in range(1, FIXED_POINT_CAP + 1):
        rho, x, w = _weight_blocks(np.zeros(n), m, rho_star, w_td)
        q = _q_from_grids(
            ensemble.fro_grid(rho), ensemble.fro_grid(x), ensemble.fro_grid(w),
            gamma, t_len, None,
        )
        half = m - eta * (a_mat @ m)
        m_next = half - eta * (half @ a_mat.T) + pref * ensemble.weighted_block_sum(
            _pad_transition_grid(q, t_len + 1)
        )
        m_next = 0.5 * (m_next + m_next.T)
        res = float(np.max(np.abs(m_next - m)))
        m = m_next
        if res < FIXED_POINT_TOL:
            l_star = float(np.sum(red.sigma_bar * m)) / n
            return m, l_star, it
    raise NumericalError(f"plateau iteration did not converge (last residual {res:.3e})")
