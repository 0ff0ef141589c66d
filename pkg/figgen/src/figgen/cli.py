"""Command-line entry: one figure per invocation."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import FigureKind, PlotSpec, SchemaError, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="figgen",
        description="Render figures from an airfed metrics CSV.")
    parser.add_argument("--input", required=True, help="metrics CSV path")
    parser.add_argument("--kind", required=True,
                        choices=[k.value for k in FigureKind],
                        help="figure to render")
    parser.add_argument("--output", required=True, help="image path (.png)")
    parser.add_argument("--smooth", type=int, default=1,
                        help="trailing moving-average window (default 1 = off)")
    args = parser.parse_args(argv)

    spec = PlotSpec(input_csv=Path(args.input), kind=FigureKind(args.kind),
                    output_image=Path(args.output),
                    smoothing_window=args.smooth)
    try:
        written = render(spec)
    except (SchemaError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {written}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
