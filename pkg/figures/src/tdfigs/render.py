"""Turn run artifacts into figures.

All input arrives through the CSV/JSON readers in :mod:`tdfigs.csvio`; the
renderer never touches the experiment code. Output is made repeatable by
pinning the backend, dpi and the SVG hash salt at import time, and by
stripping the date metadata SVG would otherwise embed.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import csvio
from .errors import FigureError
from .model import (
    SIM_VARIANTS,
    THEORY_PREFERENCE,
    FigureSpec,
    PanelSpec,
    grid_layout,
    pick_theory,
)

matplotlib.rcParams.update(
    {
        "figure.dpi": 110,
        "savefig.dpi": 110,
        "svg.hashsalt": "tdfigs",
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
        "axes.titlesize": 10,
        "legend.fontsize": 8,
        "lines.linewidth": 1.4,
    }
)

PANEL_WIDTH = 4.2
PANEL_HEIGHT = 3.2


def _theory_line(ax, iterations, mean, label):
    ax.plot(iterations, mean, "k--", label=label)


def _band(ax, iterations, mean, stderr, color, label):
    ax.fill_between(iterations, mean - stderr, mean + stderr, color=color, alpha=0.25, lw=0)
    ax.plot(iterations, mean, color=color, label=label)


def _series(data, variant, path):
    if variant not in data:
        raise FigureError(f"variant {variant!r} missing from {path}")
    return data[variant]


def _draw_curves(ax, panel: PanelSpec) -> None:
    _, path = panel.sources[0]
    data = csvio.read_aggregate(path)
    if not data:
        raise FigureError(f"empty iteration range in {path}")
    if panel.band_variant is not None:
        it, mean, stderr = _series(data, panel.band_variant, path)
        _band(ax, it, mean, stderr, "C0", panel.band_variant)
    if panel.theory_variant is not None:
        it, mean, _ = _series(data, panel.theory_variant, path)
        _theory_line(ax, it, mean, panel.theory_variant)
    ax.set_xlabel("iteration")
    ax.set_ylabel("value loss")


def _draw_sweep(ax, panel: PanelSpec) -> None:
    n = len(panel.sources)
    colors = plt.get_cmap("viridis")(np.linspace(0.1, 0.85, n))
    plotted = False
    for (label, path), color in zip(panel.sources, colors):
        data = csvio.read_aggregate(path)
        if not data:
            raise FigureError(f"empty iteration range in {path}")
        if panel.band_variant is not None:
            it, mean, stderr = _series(data, panel.band_variant, path)
            _band(ax, it, mean, stderr, color, label)
            plotted = True
        if panel.theory_variant is not None:
            it, mean, _ = _series(data, panel.theory_variant, path)
            # label the dashed theory only when there is no band to carry it
            _theory_line(ax, it, mean, label if panel.band_variant is None else None)
            plotted = True
    if not plotted:
        raise FigureError(f"panel {panel.title!r} selects no variants")
    ax.set_xlabel("iteration")
    ax.set_ylabel("value loss")


def _draw_spectral(ax, panel: PanelSpec) -> None:
    for label, path in panel.sources:
        cols = csvio.read_spectral(path)
        ax.plot(cols["k"], cols["cumulative_power"], marker="o", ms=3, label=label or None)
    ax.set_xlabel("eigenmode rank")
    ax.set_ylabel("cumulative target power")
    ax.set_ylim(0.0, 1.05)


def _draw_summary(ax, panel: PanelSpec) -> None:
    parameter, path = panel.sources[0]
    rows = csvio.read_summary(path)
    if not rows:
        raise FigureError(f"no rows in {path}")
    plateaus = np.array([plateau for _, plateau, _ in rows])
    try:
        xs = np.array([float(v) for v, _, _ in rows])
    except ValueError:
        xs = np.arange(len(rows), dtype=float)
        ax.set_xticks(xs, [v for v, _, _ in rows])
    ax.plot(xs, plateaus, marker="o", color="C3")
    ax.set_xlabel(parameter or "sweep value")
    ax.set_ylabel("plateau or final loss")


_DRAWERS = {
    "curves": _draw_curves,
    "sweep": _draw_sweep,
    "spectral": _draw_spectral,
    "summary": _draw_summary,
}


def build_figure(spec: FigureSpec):
    """Draw the figure without writing anything; raises before a file exists."""
    rows, cols = spec.layout
    fig, axes = plt.subplots(
        rows,
        cols,
        figsize=(cols * PANEL_WIDTH, rows * PANEL_HEIGHT),
        squeeze=False,
        constrained_layout=True,
    )
    flat = axes.ravel()
    try:
        for ax, panel in zip(flat, spec.panels):
            _DRAWERS[panel.kind](ax, panel)
            ax.set_title(panel.title)
            if panel.log_x:
                ax.set_xscale("log")
            if panel.log_y and panel.kind != "spectral":
                ax.set_yscale("log")
            handles, _ = ax.get_legend_handles_labels()
            if handles:
                ax.legend(frameon=False)
        for ax in flat[len(spec.panels):]:
            ax.set_visible(False)
        if spec.title:
            fig.suptitle(spec.title)
    except Exception:
        plt.close(fig)
        raise
    return fig


def render(spec: FigureSpec) -> Path:
    """Validate, draw and save one figure; returns the written path."""
    spec.validate()
    fig = build_figure(spec)
    out = Path(spec.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_kwargs = {}
    if spec.image_format == "svg":
        save_kwargs["metadata"] = {"Date": None}
    fig.savefig(out, format=spec.image_format, **save_kwargs)
    plt.close(fig)
    return out


def _resolve(meta_dir: Path, stored: str) -> Path:
    """Stored artifact paths may predate a directory move; trust the meta's
    own directory over whatever prefix was recorded at run time."""
    p = Path(stored)
    if p.is_absolute() and p.exists():
        return p
    return meta_dir / p.name

def _single_panels(meta: dict, meta_dir: Path, prefix: str = "") -> list[PanelSpec]:
    variants = list(meta.get("variants", {}))
    agg = str(_resolve(meta_dir, meta["artifacts"]["aggregate"]))
    sims = [v for v in variants if v in SIM_VARIANTS]
    theory = pick_theory(variants)
    panels = []
    if sims:
        for sim in sims:
            panels.append(
                PanelSpec(
                    kind="curves",
                    title=f"{prefix}{sim}",
                    sources=(("", agg),),
                    band_variant=sim,
                    theory_variant=theory,
                )
            )
    else:
        for name in THEORY_PREFERENCE:
            if name in variants:
                panels.append(
                    PanelSpec(
                        kind="curves",
                        title=f"{prefix}{name}",
                        sources=(("", agg),),
                        theory_variant=name,
                    )
                )
    spectral = meta.get("artifacts", {}).get("spectral")
    if spectral:
        panels.append(
            PanelSpec(
                kind="spectral",
                title=f"{prefix}spectrum",
                sources=(("", str(_resolve(meta_dir, spectral))),),
            )
        )
    return panels


def _sweep_panels(meta: dict, meta_dir: Path, prefix: str = "") -> list[PanelSpec]:
    parameter = meta["sweep"]["parameter"]
    variants = list(meta.get("config", {}).get("run", {}).get("variants", []))
    sims = [v for v in variants if v in SIM_VARIANTS]
    theory = pick_theory(variants)
    sources = tuple(
        (str(sub["value"]), str(_resolve(meta_dir, sub["path"]) / "aggregate.csv"))
        for sub in meta.get("subruns", [])
        if sub.get("ok")
    )
    if not sources:
        raise FigureError(f"sweep in {meta_dir} has no successful sub-runs")
    panels = []
    if sims:
        for sim in sims:
            panels.append(
                PanelSpec(
                    kind="sweep",
                    title=f"{prefix}{sim} over {parameter}",
                    sources=sources,
                    band_variant=sim,
                    theory_variant=theory,
                )
            )
    elif theory is not None:
        panels.append(
            PanelSpec(
                kind="sweep",
                title=f"{prefix}{theory} over {parameter}",
                sources=sources,
                theory_variant=theory,
            )
        )
    summary = str(_resolve(meta_dir, meta["artifacts"]["summary"]))
    panels.append(
        PanelSpec(
            kind="summary",
            title=f"{prefix}plateau vs {parameter}",
            sources=((parameter, summary),),
            log_x=False,
            log_y=True,
        )
    )
    return panels


def _panels_for(meta: dict, meta_dir: Path, prefix: str = "") -> list[PanelSpec]:
    kind = meta.get("kind")
    if kind == "single":
        return _single_panels(meta, meta_dir, prefix)
    if kind == "sweep":
        return _sweep_panels(meta, meta_dir, prefix)
    raise FigureError(f"unknown run kind {kind!r} in {meta_dir}")


def build_figure_specs(
    meta_path: str | Path,
    out_dir: str | Path | None = None,
    image_format: str = "png",
) -> list[FigureSpec]:
    """Map one meta.json (single run, sweep, or preset) to figure specs."""
    meta_path = Path(meta_path)
    meta = csvio.read_meta(meta_path)
    meta_dir = meta_path.resolve().parent
    out = Path(out_dir) if out_dir is not None else meta_dir / "figures"
    kind = meta.get("kind")
    if kind == "preset":
        panels: list[PanelSpec] = []
        for sub in meta.get("subruns", []):
            if not sub.get("ok"):
                continue
            sub_dir = _resolve(meta_dir, sub["path"])
            sub_meta = csvio.read_meta(sub_dir / "meta.json")
            panels.extend(_panels_for(sub_meta, sub_dir, prefix=f"{sub['label']}: "))
        if not panels:
            raise FigureError(f"preset in {meta_dir} has no successful sub-runs")
        name = meta.get("preset", "preset")
        spec = FigureSpec(
            panels=tuple(panels),
            layout=grid_layout(len(panels)),
            output_path=out / f"{name}.{image_format}",
            image_format=image_format,
            title=name,
        )
        return [spec]
    panels = _panels_for(meta, meta_dir)
    name = meta_dir.name or "figure"
    spec = FigureSpec(
        panels=tuple(panels),
        layout=grid_layout(len(panels)),
        output_path=out / f"{name}.{image_format}",
        image_format=image_format,
        title="",
    )
    return [spec]
