"""Experiment orchestration: single runs, sweeps, and figure presets.

This is the layer between configs and artifacts. A run resolves its ensemble
and reward target once, derives the TD fixed point, executes every requested
variant with independent seed streams, and writes the curve and aggregate
CSVs plus a meta.json describing everything a downstream renderer needs.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts
from .config import ExperimentConfig, ShapingConfig, SweepConfig, with_sweep_value
from .ensembles import (
    ReducedMatrices,
    build_powerlaw_ensemble,
    hypercube_ensemble,
    load_ensemble,
    reduced_matrices,
)
from .errors import ConfigurationError, NumericalError
from .gridworld import GridWorldSpec, chain_ensemble, walk_states
from .seeding import seed_for, seeds_for
from .simulator import LearnerConfig, EtaSchedule, LearningCurve, run_td
from .sources import GaussianSurrogate, GridDiffusion, HypercubeIID, PowerLawOU
from .spectral import spectral_report, spectral_report_rows, td_fixed_point
from .theory import (
    FourthMomentModel,
    dmft_curve,
    direct_recurrence_curve,
    fixed_point_plateau,
    hypercube_closed_form,
    nongaussian_curve,
)

PACKAGE_VERSION = "0.1.0"


@dataclass
class Problem:
    """A fully resolved learning problem: moments, target, fixed point."""

    ensemble: object
    w_r: np.ndarray
    reduced: ReducedMatrices
    w_td: np.ndarray
    grid_spec: GridWorldSpec | None = None
    state_rewards: np.ndarray | None = None


def build_problem(cfg: ExperimentConfig) -> Problem:
    ens_cfg = cfg.ensemble
    grid_spec = None
    state_rewards = None
    if ens_cfg.kind == "powerlaw":
        ensemble, w_r = build_powerlaw_ensemble(
            ens_cfg.n_features,
            ens_cfg.n_transitions,
            ens_cfg.spectral_exponent,
            ens_cfg.target_exponent,
        )
    elif ens_cfg.kind == "hypercube":
        ensemble = hypercube_ensemble(ens_cfg.n_features, ens_cfg.n_transitions)
        w_r = np.ones(ens_cfg.n_features)
    elif ens_cfg.kind == "gridworld":
        grid_spec = GridWorldSpec(
            side=ens_cfg.side,
            n_transitions=ens_cfg.n_transitions,
            place_cell_width=ens_cfg.bandwidth,
            reward_kind=ens_cfg.reward_map,
            reward_site=tuple(ens_cfg.reward_site) if ens_cfg.reward_site else None,
            reward_width=ens_cfg.reward_width,
            estimation_trajectories=ens_cfg.estimation_trajectories,
            exact_moments=ens_cfg.exact_moments,
        )
        ensemble, w_r, state_rewards = chain_ensemble(grid_spec)
        if not ens_cfg.exact_moments:
            from .ensembles import estimate_ensemble

            source = GridDiffusion(grid_spec)
            ensemble = estimate_ensemble(
                source,
                ens_cfg.estimation_trajectories,
                seed_for(cfg.master_seed, "estimation", 0),
            )
    elif ens_cfg.kind == "file":
        ensemble, w_r = load_ensemble(ens_cfg.path)
        if w_r is None:
            raise ConfigurationError(
                f"ensemble file {ens_cfg.path} carries no reward_weights; cannot define a target"
            )
        if ensemble.representation == "markov":
            state_rewards = ensemble.feature_matrix.T @ w_r
    else:
        raise ConfigurationError(f"unknown ensemble kind {ens_cfg.kind!r}")
    reduced = reduced_matrices(ensemble, cfg.learner.gamma)
    w_td = td_fixed_point(reduced, w_r)
    return Problem(
        ensemble=ensemble,
        w_r=np.asarray(w_r, dtype=float),
        reduced=reduced,
        w_td=w_td,
        grid_spec=grid_spec,
        state_rewards=state_rewards,
    )


def shaping_vector(shaping: ShapingConfig, problem: Problem) -> np.ndarray | None:
    """Resolve the shaping potential weights for the configured mode.

    ``scale`` stretches the fixed point by beta (w_phi = beta * w_TD).
    ``rotate`` turns w_TD by theta radians toward the top eigenvector of
    sigma_bar inside their common plane, preserving its norm; the potential
    is the difference between the rotated vector and w_TD.
    """
    if shaping.mode == "none":
        return None
    w_td = problem.w_td
    if shaping.mode == "scale":
        return shaping.beta * w_td
    norm = np.linalg.norm(w_td)
    if norm == 0.0:
        raise ConfigurationError("cannot rotate a zero fixed point")
    vals, vecs = np.linalg.eigh(problem.reduced.sigma_bar)
    top = vecs[:, -1]
    overlap = float(top @ w_td)
    if overlap < 0:
        top = -top
        overlap = -overlap
    e1 = w_td / norm
    residual = top - (top @ e1) * e1
    res_norm = np.linalg.norm(residual)
    if res_norm < 1e-12:
        return np.zeros_like(w_td)  # already aligned; any rotation is a no-op
    e2 = residual / res_norm
    rotated = norm * (np.cos(shaping.theta) * e1 + np.sin(shaping.theta) * e2)
    return rotated - w_td


def make_learner(cfg: ExperimentConfig, problem: Problem) -> LearnerConfig:
    ln = cfg.learner
    n = problem.ensemble.n_features
    if isinstance(ln.w0, str):
        w0 = None if ln.w0 == "zeros" else problem.w_td.copy()
    else:
        w0 = np.asarray(ln.w0, dtype=float)
        if w0.shape != (n,):
            raise ConfigurationError(f"learner.w0 vector must have length {n}")
    noise = ln.action_noise
    if isinstance(noise, (int, float)):
        noise_arg = None if noise == 0.0 else float(noise)
    else:
        arr = np.asarray(noise, dtype=float)
        noise_arg = None if np.all(arr == 0.0) else arr
    return LearnerConfig(
        gamma=ln.gamma,
        batch_size=ln.batch_size,
        n_steps=ln.n_steps,
        schedule=EtaSchedule(eta0=ln.eta0, chi=ln.chi),
        w0=w0,
        shaping=shaping_vector(ln.shaping, problem),
        action_noise=noise_arg,
    )


def build_source(variant: str, cfg: ExperimentConfig, problem: Problem):
    kind = cfg.ensemble.kind
    if variant == "surrogate" or (variant == "sim" and kind == "file"):
        return GaussianSurrogate(
            problem.ensemble,
            reward_weights=problem.w_r,
            state_rewards=problem.state_rewards,
        )
    if kind == "powerlaw":
        return PowerLawOU(
            cfg.ensemble.n_features,
            cfg.ensemble.n_transitions,
            cfg.ensemble.spectral_exponent,
            cfg.ensemble.target_exponent,
        )
    if kind == "hypercube":
        return HypercubeIID(cfg.ensemble.n_features, cfg.ensemble.n_transitions, problem.w_r)
    if kind == "gridworld":
        return GridDiffusion(problem.grid_spec)
    raise ConfigurationError(f"no simulator source for ensemble kind {kind!r}")


def _empirical_evaluator(cfg: ExperimentConfig, problem: Problem):
    """Mean squared gap to the exact tabular values over a fixed evaluation set."""
    spec = problem.grid_spec
    ens = problem.ensemble
    if spec is None or ens.representation != "markov":
        raise ConfigurationError("empirical evaluation needs exact grid moments")
    v_true = np.linalg.solve(
        np.eye(ens.n_states) - cfg.learner.gamma * ens.transition_matrix, problem.state_rewards
    )
    rng = np.random.default_rng(seed_for(cfg.master_seed, "evaluation", 0))
    states = walk_states(spec, rng, 200)
    feats = ens.feature_matrix[:, states].transpose(1, 2, 0)  # (episodes, T+1, N)
    targets = v_true[states]

    def evaluate(w: np.ndarray) -> float:
        return float(np.mean((feats @ w - targets) ** 2))

    return evaluate


def _closed_form_curve(cfg: ExperimentConfig, problem: Problem, lcfg: LearnerConfig):
    n = problem.ensemble.n_features
    l0 = float(problem.w_td @ problem.reduced.sigma_bar @ problem.w_td) / n
    values = np.empty(lcfg.n_steps + 1)
    for it in range(lcfg.n_steps + 1):
        hyp, _ = hypercube_closed_form(n, lcfg.batch_size, lcfg.schedule.eta0, it)
        values[it] = l0 * hyp
    etas = np.zeros(lcfg.n_steps + 1)
    etas[1:] = lcfg.schedule.eta0
    return LearningCurve(
        variant="closedform", seeds=[], per_seed=values[None, :], etas=etas, diverged=[False]
    )


def _fourth_model_for(cfg: ExperimentConfig, problem: Problem) -> FourthMomentModel:
    if cfg.ensemble.kind == "hypercube":
        return FourthMomentModel.hypercube()
    if np.max(np.abs(problem.ensemble.mean)) > 1e-12:
        raise ConfigurationError("nongauss closure needs zero-mean features")
    return FourthMomentModel.gaussian_wick()


def run_variant(variant: str, cfg: ExperimentConfig, problem: Problem) -> LearningCurve:
    lcfg = make_learner(cfg, problem)
    infinite = cfg.learner.infinite_batch
    if variant in ("sim", "surrogate"):
        if infinite:
            raise ConfigurationError("infinite_batch applies to theory variants only")
        source = build_source(variant, cfg, problem)
        seeds = seeds_for(cfg.master_seed, variant, cfg.learner.seeds)
        evaluate = _empirical_evaluator(cfg, problem) if cfg.empirical_eval else None
        result = run_td(lcfg, source, seeds, problem.reduced, problem.w_td, evaluate=evaluate)
        curve = result.curve
        curve.variant = variant
        return curve
    if variant == "dmft":
        curve, _ = dmft_curve(problem.ensemble, problem.w_r, lcfg, infinite_batch=infinite)
        return curve
    if variant == "direct":
        curve, _ = direct_recurrence_curve(
            problem.ensemble, problem.w_r, lcfg, infinite_batch=infinite
        )
        return curve
    if variant == "nongauss":
        fourth = _fourth_model_for(cfg, problem)
        curve, _ = nongaussian_curve(
            fourth, problem.ensemble, problem.w_r, lcfg, infinite_batch=infinite
        )
        return curve
    if variant == "closedform":
        return _closed_form_curve(cfg, problem, lcfg)
    raise ConfigurationError(f"unknown variant {variant!r}")


def run_single(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Execute every variant of a non-sweep config and write its artifact set."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    problem = build_problem(cfg)
    curves: list[LearningCurve] = []
    variant_meta: dict[str, dict] = {}
    for variant in cfg.variants:
        t0 = time.perf_counter()
        curve = run_variant(variant, cfg, problem)
        elapsed = time.perf_counter() - t0
        curves.append(curve)
        variant_meta[variant] = {
            "seeds": curve.seeds,
            "diverged": list(map(bool, curve.diverged)),
            "any_diverged": bool(any(curve.diverged)),
            "runtime_seconds": round(elapsed, 3),
        }
    files = {
        "curves": str(artifacts.write_curve_csv(out / "curves.csv", curves)),
        "aggregate": str(artifacts.write_aggregate_csv(out / "aggregate.csv", curves)),
    }
    if cfg.emit_spectral:
        report = spectral_report(problem.reduced.A, problem.w_td, cfg.learner.eta0)
        files["spectral"] = str(
            artifacts.write_spectral_csv(out / "spectral.csv", spectral_report_rows(report))
        )
    meta = {
        "kind": "single",
        "config": cfg.to_dict(),
        "artifacts": files,
        "variants": variant_meta,
        "versions": {"tdcurves": PACKAGE_VERSION, "numpy": np.__version__},
    }
    artifacts.write_meta(out / "meta.json", meta)
    return meta


def _tail_stats(curve: LearningCurve, window_fraction: float) -> tuple[float, float]:
    mean = curve.mean
    n = mean.shape[0]
    start = max(int(np.floor(n * (1.0 - window_fraction))), 0)
    tail = mean[start:]
    tail = tail[np.isfinite(tail)]
    plateau = float(tail.mean()) if tail.size else float("nan")
    slope = artifacts.fit_loglog_slope(curve.iterations, mean, window_fraction)
    return plateau, slope


def summary_curve(curves: list[LearningCurve]) -> LearningCurve:
    """The curve a sweep summarizes: the simulation if present, else the first."""
    for curve in curves:
        if curve.variant in ("sim", "surrogate"):
            return curve
    return curves[0]


def _run_sweep_point(cfg: ExperimentConfig, out_dir: str) -> dict:
    meta = run_single(cfg, out_dir)
    return meta


def run_sweep(cfg: ExperimentConfig) -> dict:
    """One sub-run per sweep value; failures are recorded and the rest proceed."""
    if cfg.sweep is None:
        raise ConfigurationError("run_sweep needs a [sweep] block")
    out = Path(cfg.output)
    sweep = cfg.sweep
    points = []
    results: dict[int, dict | Exception] = {}
    for i, value in enumerate(sweep.values):
        sub_dir = out / f"point_{i:02d}"
        try:
            sub_cfg = with_sweep_value(cfg, value)
        except ConfigurationError as exc:
            results[i] = exc
            points.append((i, value, None, sub_dir))
            continue
        sub_cfg.output = str(sub_dir)
        points.append((i, value, sub_cfg, sub_dir))

    runnable = [p for p in points if p[2] is not None]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {
                pool.submit(_run_sweep_point, sub_cfg, str(sub_dir)): i
                for i, _, sub_cfg, sub_dir in runnable
            }
            for fut, i in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - record and continue
                    results[i] = exc
    else:
        for i, _, sub_cfg, sub_dir in runnable:
            try:
                results[i] = _run_sweep_point(sub_cfg, str(sub_dir))
            except Exception as exc:  # noqa: BLE001 - record and continue
                results[i] = exc

    rows = []
    subruns = []
    failures = []
    for i, value, sub_cfg, sub_dir in points:
        res = results[i]
        if isinstance(res, Exception):
            failures.append({"value": value, "error": f"{type(res).__name__}: {res}"})
            rows.append(
                {
                    "sweep_value": value,
                    "plateau_or_final_loss": float("nan"),
                    "fit_slope": float("nan"),
                }
            )
            subruns.append({"value": value, "path": str(sub_dir), "ok": False})
            continue
        curves = _reload_curves(sub_dir)
        target = summary_curve(curves)
        plateau, slope = _tail_stats(target, sweep.window_fraction)
        rows.append(
            {"sweep_value": value, "plateau_or_final_loss": plateau, "fit_slope": slope}
        )
        subruns.append({"value": value, "path": str(sub_dir), "ok": True})
    files = {"summary": str(artifacts.write_summary_csv(out / "summary.csv", rows))}
    meta = {
        "kind": "sweep",
        "config": cfg.to_dict(),
        "sweep": {"parameter": sweep.parameter, "values": list(sweep.values)},
        "subruns": subruns,
        "failures": failures,
        "artifacts": files,
        "versions": {"tdcurves": PACKAGE_VERSION, "numpy": np.__version__},
    }
    artifacts.write_meta(out / "meta.json", meta)
    return meta


def _reload_curves(sub_dir: Path) -> list[LearningCurve]:
    """Rebuild curves from a sub-run's CSV (keeps the summary path file-based)."""
    parsed = artifacts.read_curve_csv(Path(sub_dir) / "curves.csv")
    curves = []
    for variant, by_seed in parsed.items():
        seeds = sorted(by_seed)
        n_pts = max(len(v) for v in by_seed.values())
        per_seed = np.full((len(seeds), n_pts), np.nan)
        etas = np.zeros(n_pts)
        for row, seed in enumerate(seeds):
            for it, loss, eta in by_seed[seed]:
                per_seed[row, it] = loss
                etas[it] = eta
        diverged = [bool(np.isnan(per_seed[r]).any()) for r in range(len(seeds))]
        curves.append(
            LearningCurve(
                variant=variant,
                seeds=[] if seeds == [-1] else seeds,
                per_seed=per_seed,
                etas=etas,
                diverged=diverged,
            )
        )
    return curves


def figure_preset(name: str) -> ExperimentConfig:
    """The primary config of a named figure preset."""
    return preset_runs(name)[0][1]


def preset_runs(name: str) -> list[tuple[str, ExperimentConfig]]:
    """All (label, config) sub-runs composing a figure preset."""
    builders = {"fig1": _fig1_runs, "fig2": _fig2_runs, "fig3": _fig3_runs, "fig4": _fig4_runs}
    if name not in builders:
        raise ConfigurationError(
            f"unknown preset {name!r}; valid names: {', '.join(sorted(builders))}"
        )
    return builders[name]()


def _base_grid_config() -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.ensemble.kind = "gridworld"
    cfg.ensemble.side = 17
    cfg.ensemble.n_transitions = 50
    cfg.ensemble.bandwidth = 0.7
    cfg.ensemble.estimation_trajectories = 5000
    cfg.learner.gamma = 0.9
    cfg.learner.n_steps = 300
    cfg.learner.seeds = 8
    return cfg


def _fig1_runs() -> list[tuple[str, ExperimentConfig]]:
    runs = []
    for label, batch in (("bandwidth_B30", 30), ("bandwidth_B3", 3)):
        cfg = _base_grid_config()
        cfg.ensemble.reward_map = "delta"
        cfg.learner.batch_size = batch
        cfg.learner.eta0 = 1.0
        cfg.variants = ["sim", "surrogate", "dmft"]
        cfg.sweep = SweepConfig(parameter="ensemble.bandwidth", values=[0.5, 0.7, 1.0])
        cfg.output = f"runs/fig1/{label}"
        runs.append((label, cfg))
    return runs


def _fig2_runs() -> list[tuple[str, ExperimentConfig]]:
    runs = []
    # gamma = 0.5: the bump reward's cumulative power then dominates the
    # delta reward's pointwise, which is the comparison the figure makes.
    for label, reward in (("sparse", "delta"), ("dense", "bump")):
        cfg = _base_grid_config()
        cfg.ensemble.reward_map = reward
        cfg.learner.gamma = 0.5
        cfg.learner.batch_size = 20
        cfg.learner.eta0 = 1.0
        cfg.variants = ["sim", "dmft"]
        cfg.emit_spectral = True
        cfg.output = f"runs/fig2/{label}"
        runs.append((label, cfg))
    return runs


def _base_powerlaw_config() -> ExperimentConfig:
    cfg = ExperimentConfig()  # defaults already describe the power-law ensemble
    cfg.learner.gamma = 0.9
    cfg.learner.batch_size = 10
    cfg.learner.eta0 = 0.5
    cfg.learner.n_steps = 2000
    cfg.learner.seeds = 4
    cfg.variants = ["sim", "dmft"]
    return cfg


def _fig3_runs() -> list[tuple[str, ExperimentConfig]]:
    batch = _base_powerlaw_config()
    batch.sweep = SweepConfig(parameter="learner.batch_size", values=[5, 10, 20, 40])
    batch.output = "runs/fig3/batch"

    eta = _base_powerlaw_config()
    eta.sweep = SweepConfig(parameter="learner.eta0", values=[0.0625, 0.125, 0.25, 0.5])
    eta.output = "runs/fig3/eta"

    gamma = _base_powerlaw_config()
    gamma.sweep = SweepConfig(parameter="learner.gamma", values=[0.05, 0.1, 0.15, 0.2])
    gamma.output = "runs/fig3/gamma"

    anneal = _base_powerlaw_config()
    anneal.learner.eta0 = 1.0
    anneal.learner.n_steps = 4000
    anneal.sweep = SweepConfig(
        parameter="learner.chi", values=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    )
    anneal.output = "runs/fig3/anneal"
    return [("batch", batch), ("eta", eta), ("gamma", gamma), ("anneal", anneal)]


def _fig4_runs() -> list[tuple[str, ExperimentConfig]]:
    scale = _base_powerlaw_config()
    scale.learner.shaping.mode = "scale"
    scale.sweep = SweepConfig(parameter="learner.shaping.beta", values=[0.0, 0.5, 1.0, 2.0])
    scale.output = "runs/fig4/scale"

    # theta grid stays inside the ~0.43 rad angle between w_TD and the top
    # eigenvector of sigma_bar on the default power-law ensemble.
    rotate = _base_powerlaw_config()
    rotate.learner.shaping.mode = "rotate"
    rotate.sweep = SweepConfig(
        parameter="learner.shaping.theta", values=[0.0, 0.1, 0.2, 0.3, 0.4]
    )
    rotate.output = "runs/fig4/rotate"
    return [("scale", scale), ("rotate", rotate)]


def run_preset(name: str, out_root: str | Path, overrides=(), jobs: int = 1) -> dict:
    """Materialize and execute every sub-run of a preset under one root directory."""
    from .config import apply_override, config_from_dict

    out_root = Path(out_root)
    sub_metas = []
    failures = []
    for label, cfg in preset_runs(name):
        data = cfg.to_dict()
        for item in overrides:
            apply_override(data, item)
        sub_cfg = config_from_dict(data)
        sub_cfg.jobs = jobs
        sub_cfg.output = str(out_root / label)
        try:
            meta = run_sweep(sub_cfg) if sub_cfg.sweep is not None else run_single(sub_cfg)
            ok = not meta.get("failures")
            sub_metas.append({"label": label, "path": str(out_root / label), "ok": bool(ok)})
            if not ok:
                failures.append({"label": label, "error": "sub-run failures; see its meta.json"})
        except Exception as exc:  # noqa: BLE001 - keep going, report at the end
            sub_metas.append({"label": label, "path": str(out_root / label), "ok": False})
            failures.append({"label": label, "error": f"{type(exc).__name__}: {exc}"})
    meta = {
        "kind": "preset",
        "preset": name,
        "subruns": sub_metas,
        "failures": failures,
        "versions": {"tdcurves": PACKAGE_VERSION, "numpy": np.__version__},
    }
    artifacts.write_meta(out_root / "meta.json", meta)
    return meta


def fixed_point_report(cfg: ExperimentConfig) -> dict:
    """Plateau fixed point for the configured ensemble and learner."""
    problem = build_problem(cfg)
    _, l_star, iters = fixed_point_plateau(
        problem.ensemble,
        problem.w_r,
        cfg.learner.gamma,
        cfg.learner.eta0,
        cfg.learner.batch_size,
    )
    return {
        "eta": cfg.learner.eta0,
        "gamma": cfg.learner.gamma,
        "batch_size": cfg.learner.batch_size,
        "plateau_loss": l_star,
        "iterations": iters,
    }
