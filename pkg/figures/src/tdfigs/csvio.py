"""Readers for the documented experiment artifacts.

This package talks to the experiment runner only through these files: the
curve/aggregate/spectral/summary CSVs and meta.json. Nothing here imports the
runner. Every reader raises FigureError naming the offending path.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import FigureError

AGGREGATE_FIELDS = ["variant", "iteration", "mean", "stderr"]
SPECTRAL_FIELDS = ["k", "re_lambda", "im_lambda", "timescale", "power", "cumulative_power"]
SUMMARY_FIELDS = ["sweep_value", "plateau_or_final_loss", "fit_slope"]


def _rows(path: str | Path, expected_fields: list[str]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FigureError(f"missing input: {path}")
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != expected_fields:
                raise FigureError(
                    f"cannot parse {path}: header {reader.fieldnames} != {expected_fields}"
                )
            return list(reader)
    except OSError as exc:
        raise FigureError(f"cannot read {path}: {exc}") from exc


def read_aggregate(path: str | Path) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """variant -> (iterations, mean, stderr), each sorted by iteration."""
    grouped: dict[str, list[tuple[int, float, float]]] = {}
    for row in _rows(path, AGGREGATE_FIELDS):
        try:
            grouped.setdefault(row["variant"], []).append(
                (int(row["iteration"]), float(row["mean"]), float(row["stderr"]))
            )
        except (TypeError, ValueError) as exc:
            raise FigureError(f"cannot parse {path}: bad row {row}") from exc
    out = {}
    for variant, entries in grouped.items():
        entries.sort()
        arr = np.array(entries, dtype=float)
        out[variant] = (arr[:, 0], arr[:, 1], arr[:, 2])
    return out


def read_spectral(path: str | Path) -> dict[str, np.ndarray]:
    rows = _rows(path, SPECTRAL_FIELDS)
    if not rows:
        raise FigureError(f"empty spectral report: {path}")
    try:
        cols = {f: np.array([float(r[f]) for r in rows]) for f in SPECTRAL_FIELDS}
    except (TypeError, ValueError) as exc:
        raise FigureError(f"cannot parse {path}") from exc
    return cols


def read_summary(path: str | Path) -> list[tuple[str, float, float]]:
    """(sweep value as written, plateau-or-final loss, fitted slope) per point."""
    out = []
    for row in _rows(path, SUMMARY_FIELDS):
        try:
            out.append(
                (row["sweep_value"], float(row["plateau_or_final_loss"]), float(row["fit_slope"]))
            )
        except (TypeError, ValueError) as exc:
            raise FigureError(f"cannot parse {path}: bad row {row}") from exc
    return out


def read_meta(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FigureError(f"missing input: {path}")
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FigureError(f"cannot parse {path}: {exc}") from exc
