"""Figure rendering for TD learning-curve runs, fed purely by CSV/JSON artifacts."""

from .errors import FigureError
from .model import FigureSpec, PanelSpec, grid_layout
from .render import build_figure, build_figure_specs, render

__all__ = [
    "FigureError",
    "FigureSpec",
    "PanelSpec",
    "grid_layout",
    "build_figure",
    "build_figure_specs",
    "render",
]

__version__ = "0.1.0"
