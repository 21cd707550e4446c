"""Command line entry point: render figures from a run's meta.json."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import FigureError
from .render import build_figure_specs, render


@click.command()
@click.argument("meta", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for the images (default: figures/ beside the meta file).")
@click.option("--format", "image_format", type=click.Choice(["png", "svg"]), default="png",
              show_default=True, help="Image format.")
def main(meta: str, out_dir: str | None, image_format: str) -> None:
    """Render every figure described by META (a run's meta.json)."""
    try:
        specs = build_figure_specs(Path(meta), out_dir, image_format)
        for spec in specs:
            path = render(spec)
            click.echo(f"wrote {path}")
    except FigureError as exc:
        click.echo(f"figure error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
