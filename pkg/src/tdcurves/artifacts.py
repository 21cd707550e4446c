"""Artifact emission: curve/aggregate/spectral/summary CSVs and meta JSON.

All writes go through a temp file in the target directory followed by an
atomic rename, so partially written artifacts never appear under their final
names. Floats are formatted with %.17g, enough digits to round-trip doubles,
which makes byte-identical reruns possible.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .simulator import LearningCurve


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def write_curve_csv(path: str | Path, curves: list[LearningCurve]) -> Path:
    """Per-iteration rows for every seed of every curve.

    Deterministic variants carry seed -1. Diverged seeds keep their partial
    rows (later entries are NaN) so failures stay inspectable.
    """
    lines = ["variant,seed,iteration,value_error,eta"]
    for curve in curves:
        seeds = curve.seeds if curve.seeds else [-1] * curve.per_seed.shape[0]
        for row, seed in enumerate(seeds):
            for it in range(curve.per_seed.shape[1]):
                lines.append(
                    f"{curve.variant},{seed},{it},{_fmt(curve.per_seed[row, it])},{_fmt(curve.etas[it])}"
                )
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_aggregate_csv(path: str | Path, curves: list[LearningCurve]) -> Path:
    lines = ["variant,iteration,mean,stderr"]
    for curve in curves:
        mean, stderr = curve.mean, curve.stderr
        for it in range(mean.shape[0]):
            lines.append(f"{curve.variant},{it},{_fmt(mean[it])},{_fmt(stderr[it])}")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_spectral_csv(path: str | Path, rows: list[dict]) -> Path:
    lines = ["k,re_lambda,im_lambda,timescale,power,cumulative_power"]
    for r in rows:
        lines.append(
            f"{r['k']},{_fmt(r['re_lambda'])},{_fmt(r['im_lambda'])},"
            f"{_fmt(r['timescale'])},{_fmt(r['power'])},{_fmt(r['cumulative_power'])}"
        )
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary_csv(path: str | Path, rows: list[dict]) -> Path:
    lines = ["sweep_value,plateau_or_final_loss,fit_slope"]
    for r in rows:
        value = r["sweep_value"]
        value_txt = _fmt(value) if isinstance(value, (int, float)) else str(value)
        lines.append(f"{value_txt},{_fmt(r['plateau_or_final_loss'])},{_fmt(r['fit_slope'])}")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_meta(path: str | Path, meta: dict) -> Path:
    return atomic_write_text(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_curve_csv(path: str | Path) -> dict[str, dict[int, list[tuple[int, float, float]]]]:
    """Parse a curve CSV back into variant -> seed -> [(iteration, loss, eta)]."""
    out: dict[str, dict[int, list[tuple[int, float, float]]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_seed = out.setdefault(row["variant"], {})
            by_seed.setdefault(int(row["seed"]), []).append(
                (int(row["iteration"]), float(row["value_error"]), float(row["eta"]))
            )
    return out


def fit_loglog_slope(iterations: np.ndarray, values: np.ndarray,
                     window_fraction: float = 0.25) -> float:
    """Least-squares slope of log(value) vs log(iteration) over the tail window.

    Iteration 0 and non-positive values are excluded (the log is undefined
    there); returns NaN when fewer than two usable points remain.
    """
    iterations = np.asarray(iterations, dtype=float)
    values = np.asarray(values, dtype=float)
    n = iterations.shape[0]
    start = int(np.floor(n * (1.0 - window_fraction)))
    sl = slice(max(start, 0), n)
    its, vals = iterations[sl], values[sl]
    mask = (its >= 1) & (vals > 0) & np.isfinite(vals)
    if mask.sum() < 2:
        return float("nan")
    x = np.log(its[mask])
    y = np.log(vals[mask])
    if np.ptp(x) == 0:
        return float("nan")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
