"""Render simulator metrics CSVs into figures.

Reads the harness CSV (scheme, seed, round, snr_db, server_acc, client_id,
client_bits, client_acc, converged_round, clip_events) and produces either
per-scheme training curves or final 4-bit client accuracy bars. The input
file is only ever read; the plot style is pinned so repeated renders of the
same table are identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REQUIRED_COLUMNS = ("scheme", "seed", "round", "snr_db", "server_acc",
                    "client_id", "client_bits", "client_acc",
                    "converged_round", "clip_events")

STYLE = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.35,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "svg.hashsalt": "figgen",
}

MARKERS = ["o", "s", "D", "^", "v", "X", "P", "*"]


class SchemaError(ValueError):
    """The CSV does not carry the metrics schema; names the missing column."""


class FigureKind(Enum):
    CONVERGENCE_CURVES = "convergence"
    CLIENT_ACCURACY_BARS = "client-bars"


@dataclass(frozen=True)
class PlotSpec:
    input_csv: Path
    kind: FigureKind
    output_image: Path
    smoothing_window: int = 1

    def __post_init__(self):
        if self.smoothing_window < 1:
            raise ValueError("smoothing window must be at least 1")


@dataclass(frozen=True)
class Row:
    scheme: str
    seed: int
    round_index: int
    snr_db: float
    server_acc: float
    client_id: int | None
    client_bits: int | None
    client_acc: float | None


def load_rows(path) -> list[Row]:
    """Parse the metrics CSV, validating the schema first."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in REQUIRED_COLUMNS:
            if column not in header:
                raise SchemaError(f"{path}: missing column {column!r}")
        rows = []
        for rec in reader:
            rows.append(Row(
                scheme=rec["scheme"],
                seed=int(rec["seed"]),
                round_index=int(rec["round"]),
                snr_db=float(rec["snr_db"]),
                server_acc=float(rec["server_acc"]),
                client_id=int(rec["client_id"]) if rec["client_id"] else None,
                client_bits=int(rec["client_bits"]) if rec["client_bits"] else None,
                client_acc=float(rec["client_acc"]) if rec["client_acc"] else None,
            ))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return values
    # trailing average with a warm-up ramp, same length as the input
    out = np.empty_like(values, dtype=float)
    for i in range(values.size):
        out[i] = values[max(0, i - window + 1):i + 1].mean()
    return out


def _series_label(scheme: str, snr: float, multi_snr: bool) -> str:
    return f"{scheme} @ {snr:g} dB" if multi_snr else scheme


def _ordered_groups(rows: list[Row]):
    """(scheme, snr) pairs in first-appearance order."""
    seen = []
    for row in rows:
        key = (row.scheme, row.snr_db)
        if key not in seen:
            seen.append(key)
    return seen


def render_convergence_curves(rows: list[Row], spec: PlotSpec) -> None:
    server = [r for r in rows if r.client_id is None]
    if not server:
        raise SchemaError(f"{spec.input_csv}: no server rows to plot")
    groups = _ordered_groups(server)
    multi_snr = len({snr for _, snr in groups}) > 1

    fig, ax = plt.subplots()
    for idx, (scheme, snr) in enumerate(groups):
        cell = [r for r in server if r.scheme == scheme and r.snr_db == snr]
        rounds = sorted({r.round_index for r in cell})
        mean_acc = np.array([
            np.mean([r.server_acc for r in cell if r.round_index == k])
            for k in rounds])
        ax.plot(rounds, moving_average(mean_acc, spec.smoothing_window),
                marker=MARKERS[idx % len(MARKERS)], markersize=3.5,
                linewidth=1.2, label=_series_label(scheme, snr, multi_snr))
    ax.set_xlabel("communication round")
    ax.set_ylabel("server top-1 accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.output_image)
    plt.close(fig)


def render_client_accuracy_bars(rows: list[Row], spec: PlotSpec) -> None:
    clients = [r for r in rows if r.client_bits == 4 and r.client_acc is not None]
    if not clients:
        raise SchemaError(f"{spec.input_csv}: no 4-bit client rows to plot")
    groups = [g for g in _ordered_groups(clients)]
    multi_snr = len({snr for _, snr in groups}) > 1

    labels, heights = [], []
    for scheme, snr in groups:
        cell = [r for r in clients if r.scheme == scheme and r.snr_db == snr]
        final = max(r.round_index for r in cell)
        per_seed = []
        for seed in sorted({r.seed for r in cell}):
            accs = [r.client_acc for r in cell
                    if r.seed == seed and r.round_index == final]
            per_seed.append(np.mean(accs))
        labels.append(_series_label(scheme, snr, multi_snr))
        heights.append(float(np.mean(per_seed)))

    fig, ax = plt.subplots()
    positions = np.arange(len(labels))
    ax.bar(positions, heights, width=0.6, color="#4878a8")
    for x, h in zip(positions, heights):
        ax.text(x, h + 0.01, f"{h:.3f}", ha="center", va="bottom", fontsize=8)
    ax.set_xticks(positions)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("final 4-bit client top-1 accuracy")
    ax.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(spec.output_image)
    plt.close(fig)


def render(spec: PlotSpec) -> Path:
    """Produce the requested figure; returns the written image path."""
    rows = load_rows(spec.input_csv)
    with plt.rc_context(STYLE):
        if spec.kind is FigureKind.CONVERGENCE_CURVES:
            render_convergence_curves(rows, spec)
        else:
            render_client_accuracy_bars(rows, spec)
    return Path(spec.output_image)
