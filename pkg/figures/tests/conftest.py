"""Shared fixtures: miniature preset runs produced by the real CLI.

The renderer is only ever fed files, so the fixtures shell out to the
experiment runner exactly the way a user would, just with tiny problem
sizes to keep the session quick.
"""

from __future__ import annotations

import subprocess
import sys

import pytest

GRID_SHRINK = [
    "ensemble.side=5",
    "ensemble.n_transitions=10",
    "ensemble.estimation_trajectories=300",
    "learner.seeds=2",
]
POWERLAW_SHRINK = [
    "ensemble.n_features=12",
    "ensemble.n_transitions=6",
    "learner.n_steps=60",
    "learner.seeds=2",
]

PRESET_OVERRIDES = {
    "fig1": GRID_SHRINK + ["learner.n_steps=15"],
    "fig2": GRID_SHRINK + ["learner.n_steps=30"],
    "fig3": POWERLAW_SHRINK,
    "fig4": POWERLAW_SHRINK,
}


def run_preset_cli(name: str, out_dir, overrides) -> None:
    cmd = [sys.executable, "-m", "tdcurves.cli", "preset", name, "--out", str(out_dir)]
    for item in overrides:
        cmd += ["--set", item]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(
            f"{name} fixture failed ({proc.returncode}):\n{proc.stdout}\n{proc.stderr}"
        )


@pytest.fixture(scope="session")
def preset_outputs(tmp_path_factory):
    """meta.json paths for all four presets, keyed by preset name."""
    root = tmp_path_factory.mktemp("presets")
    metas = {}
    for name, overrides in PRESET_OVERRIDES.items():
        out = root / name
        run_preset_cli(name, out, overrides)
        metas[name] = out / "meta.json"
    return metas
