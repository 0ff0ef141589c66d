"""Figure rendering for simulator metrics CSVs."""

from .render import FigureKind, PlotSpec, SchemaError, load_rows, render

__version__ = "0.1.0"
