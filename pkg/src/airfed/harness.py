"""Experiment front end: configuration, sweeps, metrics CSV, summaries.

A configuration is a flat ``key = value`` text file (UTF-8, ``#`` comments).
Unknown keys are rejected; missing keys take the documented defaults. One
experiment is the cross product of schemes x replication seeds x SNR
levels; each cell runs a full federation and contributes one server row
plus one row per client for every round. The CSV bytes are a pure function
of the configuration and master seed: rows are assembled in canonical
(scheme, seed, snr, round, client) order no matter how cells are executed.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field, replace

from .channel import (
    DEFAULT_GAIN_CAP,
    DEFAULT_PILOT_LEN,
    NoiseReference,
    NoiseSpec,
    PilotSequence,
)
from .datasets import Dataset, FileFormat, Split, generate_synthetic, load_external, shard_uniform
from .errors import ConfigurationError
from .federation import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CLIENTS_PER_LEVEL,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    RunSetup,
    SchemeConfig,
    build_clients,
    build_initial_model,
    detect_convergence,
    run_federation,
)
from .model import Architecture
from .seeds import derive_rng, derive_seed

#: environment variable that overrides the configured output directory
OUTPUT_DIR_ENV = "AIRFED_OUTPUT_DIR"

CSV_HEADER = ("scheme", "seed", "round", "snr_db", "server_acc", "client_id",
              "client_bits", "client_acc", "converged_round", "clip_events")

#: schemes swept when none are configured: the mixed ladders plus the
#: uniform baselines
DEFAULT_SWEEP = ("[32,4,4]", "[24,4,4]", "[16,4,4]", "[12,4,4]",
                 "[16,16,16]", "[8,8,8]", "[4,4,4]")

DEFAULT_SNR_SWEEP = (5.0, 10.0, 20.0, 30.0)
DEFAULT_HIDDEN = (64, 32)


@dataclass(frozen=True)
class ExperimentConfig:
    schemes: tuple[str, ...] = ("[16,4,4]",)
    rounds: int = 100
    clients_per_level: int = DEFAULT_CLIENTS_PER_LEVEL
    prefer_float: bool = False
    snr_db: tuple[float, ...] = DEFAULT_SNR_SWEEP
    # measured reference keeps the nominal SNR meaningful for weight-scale
    # signals; the unit reference stays available via noise_ref = unit
    noise_ref: NoiseReference = NoiseReference.MEASURED_SIGNAL
    lr: float = DEFAULT_LR
    epochs: int = DEFAULT_EPOCHS
    batch: int = DEFAULT_BATCH_SIZE
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    data: str = "synthetic"
    train_path: str | None = None
    test_path: str | None = None
    n_train: int = 3000
    n_test: int = 1000
    classes: int = 10
    dim: int = 48
    master_seed: int = 1234
    seeds: int = 1
    output_dir: str = "results"
    gain_cap: float = DEFAULT_GAIN_CAP
    pilot_len: int = DEFAULT_PILOT_LEN
    convergence_window: int = 5
    convergence_fraction: float = 0.95

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigurationError(f"seeds must be at least 1, got {self.seeds}")
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be at least 1, got {self.rounds}")
        if not self.schemes:
            raise ConfigurationError("at least one scheme is required")
        for text in self.schemes:
            SchemeConfig.parse(text)
        if self.data not in ("synthetic", "csv", "idx"):
            raise ConfigurationError(f"unknown data source {self.data!r}")
        if self.data != "synthetic" and not (self.train_path and self.test_path):
            raise ConfigurationError("file data sources need train_path and test_path")

    def scheme_configs(self) -> list[SchemeConfig]:
        return [SchemeConfig.parse(text, clients_per_level=self.clients_per_level,
                                   prefer_float=self.prefer_float)
                for text in self.schemes]

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV, self.output_dir)


_BOOL_WORDS = {"true": True, "yes": True, "1": True,
               "false": False, "no": False, "0": False}


def _parse_bool(key: str, raw: str) -> bool:
    try:
        return _BOOL_WORDS[raw.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}") from None


def _parse_scheme_list(raw: str) -> tuple[str, ...]:
    chunks = [c.strip() for c in raw.replace(";", " ").split("]") if c.strip()]
    schemes = tuple(c + "]" for c in chunks)
    for text in schemes:
        SchemeConfig.parse(text)
    return schemes


def _parse_float_list(key: str, raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"{key}: expected comma-separated numbers, got {raw!r}") from None


def _parse_int_list(key: str, raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"{key}: expected comma-separated integers, got {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse a flat key=value document into a validated configuration."""
    values: dict = {}
    saw_scheme = saw_schemes = False
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {line_no}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "scheme":
            values["schemes"] = (raw,)
            SchemeConfig.parse(raw)
            saw_scheme = True
        elif key == "schemes":
            values["schemes"] = _parse_scheme_list(raw)
            saw_schemes = True
        elif key in ("rounds", "clients_per_level", "epochs", "batch", "n_train",
                     "n_test", "classes", "dim", "master_seed", "seeds",
                     "pilot_len", "convergence_window"):
            try:
                values[key] = int(raw)
            except ValueError:
                raise ConfigurationError(f"{key}: expected an integer, got {raw!r}") from None
        elif key in ("lr", "gain_cap", "convergence_fraction"):
            try:
                values[key] = float(raw)
            except ValueError:
                raise ConfigurationError(f"{key}: expected a number, got {raw!r}") from None
        elif key == "prefer_float":
            values[key] = _parse_bool(key, raw)
        elif key == "snr_db":
            values[key] = _parse_float_list(key, raw)
        elif key == "hidden":
            values[key] = _parse_int_list(key, raw)
        elif key == "noise_ref":
            try:
                values[key] = NoiseReference(raw.strip().lower())
            except ValueError:
                raise ConfigurationError(
                    f"noise_ref must be 'unit' or 'measured', got {raw!r}") from None
        elif key in ("data", "train_path", "test_path", "output_dir"):
            values[key] = raw
        else:
            raise ConfigurationError(f"line {line_no}: unknown key {key!r}")
    if saw_scheme and saw_schemes:
        raise ConfigurationError("give either 'scheme' or 'schemes', not both")
    return ExperimentConfig(**values)


# ---------------------------------------------------------------------------
# Metrics table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    scheme: str
    seed: int
    round_index: int
    snr_db: float
    server_acc: float
    client_id: int | None
    client_bits: int | None
    client_acc: float | None
    converged_round: int | None
    clip_events: int


@dataclass
class MetricsTable:
    rows: list[MetricsRow] = field(default_factory=list)

    def server_rows(self) -> list[MetricsRow]:
        return [r for r in self.rows if r.client_id is None]

    def client_rows(self) -> list[MetricsRow]:
        return [r for r in self.rows if r.client_id is not None]


def _fmt_acc(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def _fmt_opt_int(value: int | None) -> str:
    return "" if value is None else str(value)


def write_metrics(table: MetricsTable, path) -> None:
    """Write the CSV atomically: temp file in place, then rename."""
    directory = os.path.dirname(os.fspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in table.rows:
                writer.writerow([
                    row.scheme,
                    row.seed,
                    row.round_index,
                    f"{row.snr_db:g}",
                    _fmt_acc(row.server_acc),
                    _fmt_opt_int(row.client_id),
                    _fmt_opt_int(row.client_bits),
                    _fmt_acc(row.client_acc),
                    _fmt_opt_int(row.converged_round),
                    row.clip_events,
                ])
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def read_metrics(path) -> MetricsTable:
    """Read a CSV written by :func:`write_metrics`."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ConfigurationError(
                f"{path}: header {header} does not match {list(CSV_HEADER)}"
            )
        for record in reader:
            rows.append(MetricsRow(
                scheme=record[0],
                seed=int(record[1]),
                round_index=int(record[2]),
                snr_db=float(record[3]),
                server_acc=float(record[4]),
                client_id=int(record[5]) if record[5] else None,
                client_bits=int(record[6]) if record[6] else None,
                client_acc=float(record[7]) if record[7] else None,
                converged_round=int(record[8]) if record[8] else None,
                clip_events=int(record[9]),
            ))
    return MetricsTable(rows=rows)


# ---------------------------------------------------------------------------
# Experiment execution
# ---------------------------------------------------------------------------

def _load_data(cfg: ExperimentConfig, seed_idx: int) -> tuple[Dataset, Dataset]:
    if cfg.data == "synthetic":
        return generate_synthetic(derive_seed(cfg.master_seed, "data", seed_idx),
                                  cfg.n_train, cfg.n_test, cfg.classes, cfg.dim)
    fmt = FileFormat(cfg.data)
    return (load_external(cfg.train_path, fmt, split=Split.TRAIN),
            load_external(cfg.test_path, fmt, split=Split.TEST))


def run_experiment(cfg: ExperimentConfig) -> MetricsTable:
    """Run every (scheme, seed, snr) cell and assemble the canonical table."""
    schemes = cfg.scheme_configs()
    n_clients = 3 * cfg.clients_per_level

    # per-replicate context is shared by every scheme and SNR cell
    contexts = []
    for seed_idx in range(cfg.seeds):
        train, test = _load_data(cfg, seed_idx)
        arch = Architecture(layer_dims=(train.dim, *cfg.hidden, train.n_classes))
        plan = shard_uniform(train, n_clients, derive_rng(cfg.master_seed, "shard", seed_idx))
        init = build_initial_model(arch, derive_seed(cfg.master_seed, "init", seed_idx))
        contexts.append((train, test, arch, plan, init))

    table = MetricsTable()
    for scheme_idx, scheme in enumerate(schemes):
        for seed_idx in range(cfg.seeds):
            train, test, arch, plan, init = contexts[seed_idx]
            for snr in cfg.snr_db:
                noise = NoiseSpec(snr_db=snr, reference=cfg.noise_ref)
                setup = RunSetup(
                    arch=arch, test_set=test, lr=cfg.lr, epochs=cfg.epochs,
                    batch_size=cfg.batch, gain_cap=cfg.gain_cap,
                    pilot=PilotSequence.unit(cfg.pilot_len),
                    run_seed=derive_seed(cfg.master_seed, "scheme", scheme_idx,
                                         "rep", seed_idx),
                )
                clients = build_clients(scheme, arch, train, plan, init)
                records = run_federation(scheme, cfg.rounds, noise, setup, clients)
                converged = detect_convergence(records, cfg.convergence_window,
                                               cfg.convergence_fraction)
                specs = scheme.client_specs()
                for record in records:
                    table.rows.append(MetricsRow(
                        scheme=scheme.label, seed=seed_idx,
                        round_index=record.round_index, snr_db=snr,
                        server_acc=record.server_accuracy,
                        client_id=None, client_bits=None, client_acc=None,
                        converged_round=converged,
                        clip_events=record.clip_events,
                    ))
                    for client_id, acc in enumerate(record.per_client_accuracy):
                        table.rows.append(MetricsRow(
                            scheme=scheme.label, seed=seed_idx,
                            round_index=record.round_index, snr_db=snr,
                            server_acc=record.server_accuracy,
                            client_id=client_id,
                            client_bits=specs[client_id].bits,
                            client_acc=acc,
                            converged_round=converged,
                            clip_events=record.clip_events,
                        ))
    return table


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchemeSummary:
    scheme: str
    snr_db: float
    converged_round: float | None
    final_server_acc: float
    low_precision_client_acc: float | None  # mean final accuracy of 4-bit clients


def summarize(table: MetricsTable) -> list[SchemeSummary]:
    """Per (scheme, snr): convergence round, final server and 4-bit client accuracy.

    Values are averaged over replication seeds; the 4-bit field is absent
    (None) for schemes without 4-bit clients.
    """
    cells: dict[tuple[str, float], dict[int, list[MetricsRow]]] = {}
    order: list[tuple[str, float]] = []
    for row in table.rows:
        key = (row.scheme, row.snr_db)
        if key not in cells:
            cells[key] = {}
            order.append(key)
        cells[key].setdefault(row.seed, []).append(row)

    summaries = []
    for key in order:
        scheme, snr = key
        conv_values, final_accs, low_bit_accs = [], [], []
        for seed, rows in sorted(cells[key].items()):
            final_round = max(r.round_index for r in rows)
            server = [r for r in rows if r.client_id is None]
            final_accs.append(next(r.server_acc for r in server
                                   if r.round_index == final_round))
            conv = server[0].converged_round
            if conv is not None:
                conv_values.append(conv)
            finals = [r.client_acc for r in rows
                      if r.client_id is not None and r.client_bits == 4
                      and r.round_index == final_round]
            if finals:
                low_bit_accs.append(sum(finals) / len(finals))
        summaries.append(SchemeSummary(
            scheme=scheme, snr_db=snr,
            converged_round=sum(conv_values) / len(conv_values) if conv_values else None,
            final_server_acc=sum(final_accs) / len(final_accs),
            low_precision_client_acc=(sum(low_bit_accs) / len(low_bit_accs)
                                      if low_bit_accs else None),
        ))
    return summaries


def format_summary(summaries: list[SchemeSummary]) -> str:
    lines = [f"{'scheme':<14} {'snr_db':>7} {'conv_round':>11} "
             f"{'server_acc':>11} {'acc_4bit':>9}"]
    for s in summaries:
        conv = f"{s.converged_round:.1f}" if s.converged_round is not None else "-"
        low = f"{s.low_precision_client_acc:.4f}" if s.low_precision_client_acc is not None else "-"
        lines.append(f"{s.scheme:<14} {s.snr_db:>7g} {conv:>11} "
                     f"{s.final_server_acc:>11.4f} {low:>9}")
    return "\n".join(lines)
