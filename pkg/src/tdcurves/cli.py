"""Command-line front end.

Every subcommand shares the same configuration pipeline: an optional TOML
file, then repeatable ``--set key=value`` overrides, then the convenience
flags (``--seeds``, ``--master-seed``, ``--jobs``, ``--out``) which are just
shorthand for the corresponding override. Exit codes: 0 success, 2 config
error, 3 numerical error, 4 partial sweep failure.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from .config import ExperimentConfig, load_config
from .errors import ConfigurationError, NumericalError
from .experiments import (
    build_problem,
    fixed_point_report,
    run_preset,
    run_single,
    run_sweep,
)
from . import artifacts
from .spectral import spectral_report, spectral_report_rows

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def common_options(fn):
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="TOML experiment config.")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                  help="Override a config field (dotted keys, TOML values).")
    @click.option("--seeds", type=int, default=None, help="Number of simulation seeds.")
    @click.option("--master-seed", type=int, default=None, help="Master seed for all streams.")
    @click.option("--jobs", type=int, default=None, help="Concurrent sweep points.")
    @click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def build_config(config_path, overrides, seeds, master_seed, jobs, out_dir) -> ExperimentConfig:
    items = list(overrides)
    if seeds is not None:
        items.append(f"learner.seeds={seeds}")
    if master_seed is not None:
        items.append(f"run.master_seed={master_seed}")
    if jobs is not None:
        items.append(f"run.jobs={jobs}")
    if out_dir is not None:
        items.append(f'run.output="{out_dir}"')
    return load_config(config_path, items)


def guarded(fn):
    """Map package exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except NumericalError as exc:
            click.echo(f"numerical error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _finish_single(meta: dict) -> None:
    click.echo(f"wrote {meta['artifacts']['curves']}")
    diverged = [v for v, info in meta["variants"].items() if info["any_diverged"]]
    if diverged:
        click.echo(f"note: divergence in {', '.join(diverged)} (NaN rows kept)", err=True)


@click.group()
def main():
    """TD(0) learning-curve experiments and mean-field theory."""


@main.command()
@common_options
@guarded
def simulate(config_path, overrides, seeds, master_seed, jobs, out_dir):
    """Run only the Monte Carlo simulation variants."""
    cfg = build_config(config_path, overrides, seeds, master_seed, jobs, out_dir)
    kept = [v for v in cfg.variants if v in ("sim", "surrogate")] or ["sim"]
    cfg.variants = kept
    _finish_single(run_single(cfg))


@main.command()
@common_options
@guarded
def theory(config_path, overrides, seeds, master_seed, jobs, out_dir):
    """Run only the deterministic theory variants."""
    cfg = build_config(config_path, overrides, seeds, master_seed, jobs, out_dir)
    kept = [v for v in cfg.variants if v not in ("sim", "surrogate")] or ["dmft"]
    cfg.variants = kept
    _finish_single(run_single(cfg))


@main.command()
@common_options
@guarded
def compare(config_path, overrides, seeds, master_seed, jobs, out_dir):
    """Run every configured variant (simulation plus theory)."""
    cfg = build_config(config_path, overrides, seeds, master_seed, jobs, out_dir)
    _finish_single(run_single(cfg))


@main.command()
@common_options
@guarded
def spectral(config_path, overrides, seeds, master_seed, jobs, out_dir):
    """Eigensystem report of the update matrix for the configured ensemble."""
    cfg = build_config(config_path, overrides, seeds, master_seed, jobs, out_dir)
    problem = build_problem(cfg)
    report = spectral_report(problem.reduced.A, problem.w_td, cfg.learner.eta0)
    out = artifacts.write_spectral_csv(
        f"{cfg.output}/spectral.csv", spectral_report_rows(report)
    )
    artifacts.write_meta(
        f"{cfg.output}/meta.json",
        {"kind": "spectral", "config": cfg.to_dict(), "artifacts": {"spectral": str(out)}},
    )
    click.echo(f"wrote {out}")


@main.command()
@common_options
@guarded
def sweep(config_path, overrides, seeds, master_seed, jobs, out_dir):
    """Run the configured sweep, one sub-run per value."""
    cfg = build_config(config_path, overrides, seeds, master_seed, jobs, out_dir)
    meta = run_sweep(cfg)
    click.echo(f"wrote {meta['artifacts']['summary']}")
    if meta["failures"]:
        for failure in meta["failures"]:
            click.echo(f"sweep point {failure['value']} failed: {failure['error']}", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("fixed-point")
@common_options
@guarded
def fixed_point(config_path, overrides, seeds, master_seed, jobs, out_dir):
    """Self-consistent plateau loss at the configured constant learning rate."""
    cfg = build_config(config_path, overrides, seeds, master_seed, jobs, out_dir)
    report = fixed_point_report(cfg)
    click.echo(json.dumps(report, indent=2, sort_keys=True))
    if out_dir is not None:
        artifacts.write_meta(
            f"{cfg.output}/fixed_point.json", {"kind": "fixed_point", **report}
        )


@main.command()
@click.argument("name")
@common_options
@guarded
def preset(name, config_path, overrides, seeds, master_seed, jobs, out_dir):
    """Run a named figure preset (fig1..fig4) end to end."""
    if config_path is not None:
        raise ConfigurationError("presets define their own configs; use --set to adjust them")
    items = list(overrides)
    if seeds is not None:
        items.append(f"learner.seeds={seeds}")
    if master_seed is not None:
        items.append(f"run.master_seed={master_seed}")
    out_root = out_dir if out_dir is not None else f"runs/{name}"
    meta = run_preset(name, out_root, items, jobs=jobs or 1)
    for sub in meta["subruns"]:
        status = "ok" if sub["ok"] else "FAILED"
        click.echo(f"{sub['label']}: {status} ({sub['path']})")
    if meta["failures"]:
        sys.exit(EXIT_PARTIAL)


if __name__ == "__main__":
    main()
