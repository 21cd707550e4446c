"""Figure and panel descriptions, decoupled from any rendering backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import csvio
from .errors import FigureError

PANEL_KINDS = ("curves", "sweep", "spectral", "summary")
IMAGE_FORMATS = ("png", "svg")

# Ensemble-average simulations draw as mean +- stderr bands; recursion outputs
# draw as dashed black lines, one paired with each band.
SIM_VARIANTS = ("sim", "surrogate")
THEORY_PREFERENCE = ("dmft", "direct", "nongauss", "closedform")


def pick_theory(variants) -> str | None:
    for name in THEORY_PREFERENCE:
        if name in variants:
            return name
    return None


@dataclass(frozen=True)
class PanelSpec:
    """One axes worth of content.

    ``sources`` holds (label, csv_path) pairs: a single pair for curves,
    spectral and summary panels, one pair per sweep value for sweep panels.
    ``band_variant``/``theory_variant`` select which rows of the aggregate
    CSVs become the band and its paired dashed line.
    """

    kind: str
    title: str
    sources: tuple[tuple[str, str], ...]
    band_variant: str | None = None
    theory_variant: str | None = None
    log_x: bool = False
    log_y: bool = True


@dataclass(frozen=True)
class FigureSpec:
    panels: tuple[PanelSpec, ...]
    layout: tuple[int, int]  # (rows, cols)
    output_path: Path
    image_format: str = "png"
    title: str = ""

    def validate(self) -> None:
        if self.image_format not in IMAGE_FORMATS:
            raise FigureError(f"unknown image format {self.image_format!r}")
        if not self.panels:
            raise FigureError("figure needs at least one panel")
        rows, cols = self.layout
        n = len(self.panels)
        if rows < 1 or cols < 1 or rows * cols < n or (rows - 1) * cols >= n:
            raise FigureError(f"layout {self.layout} does not fit {n} panels")
        readers = {
            "curves": csvio.read_aggregate,
            "sweep": csvio.read_aggregate,
            "spectral": csvio.read_spectral,
            "summary": csvio.read_summary,
        }
        for panel in self.panels:
            if panel.kind not in PANEL_KINDS:
                raise FigureError(f"unknown panel kind {panel.kind!r}")
            if not panel.sources:
                raise FigureError(f"panel {panel.title!r} has no inputs")
            for _, path in panel.sources:
                readers[panel.kind](path)  # existence + schema

    def with_output(self, path: Path) -> "FigureSpec":
        return FigureSpec(self.panels, self.layout, Path(path), self.image_format, self.title)


def grid_layout(n_panels: int, max_cols: int = 3) -> tuple[int, int]:
    cols = min(max_cols, n_panels)
    rows = -(-n_panels // cols)
    return rows, cols
