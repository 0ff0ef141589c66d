"""Command-line front end.

Subcommands:

* ``run``        one experiment (a single scheme),
* ``sweep``      a list of schemes (default: mixed ladders plus baselines),
* ``demo-eq3``   the digital-vs-analog superposition mismatch report,
* ``summarize``  per-scheme summary of an existing metrics CSV.

Flags mirror the config-file keys and override values read from ``--config``.
The output directory resolves as flag > AIRFED_OUTPUT_DIR > config > default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .errors import AirfedError
from .harness import (
    DEFAULT_SWEEP,
    ExperimentConfig,
    format_summary,
    parse_config,
    read_metrics,
    run_experiment,
    summarize,
    write_metrics,
)
from .qam import exhaustive_code_pair_tensors, qam_superposition_demo

_CONFIG_FLAGS = [
    ("rounds", int), ("clients_per_level", int), ("epochs", int), ("batch", int),
    ("n_train", int), ("n_test", int), ("classes", int), ("dim", int),
    ("master_seed", int), ("seeds", int), ("pilot_len", int),
    ("convergence_window", int),
    ("lr", float), ("gain_cap", float), ("convergence_fraction", float),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    for key, kind in _CONFIG_FLAGS:
        parser.add_argument(f"--{key.replace('_', '-')}", type=kind, dest=key)
    parser.add_argument("--snr-db", dest="snr_db",
                        help="comma-separated SNR levels in dB (inf allowed)")
    parser.add_argument("--hidden", help="comma-separated hidden layer widths")
    parser.add_argument("--prefer-float", dest="prefer_float", action="store_true",
                        default=None,
                        help="use the float layout at 8 bits and above")
    parser.add_argument("--noise-ref", dest="noise_ref", choices=["unit", "measured"])
    parser.add_argument("--data", choices=["synthetic", "csv", "idx"])
    parser.add_argument("--train-path", dest="train_path")
    parser.add_argument("--test-path", dest="test_path")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--output", default="metrics.csv",
                        help="CSV file name inside the output directory")


def _build_config(args: argparse.Namespace, schemes: tuple[str, ...] | None
                  ) -> ExperimentConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for key, _ in _CONFIG_FLAGS:
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.snr_db is not None:
        overrides["snr_db"] = tuple(float(v) for v in args.snr_db.split(",") if v.strip())
    if args.hidden is not None:
        overrides["hidden"] = tuple(int(v) for v in args.hidden.split(",") if v.strip())
    if args.prefer_float is not None:
        overrides["prefer_float"] = args.prefer_float
    if args.noise_ref is not None:
        from .channel import NoiseReference
        overrides["noise_ref"] = NoiseReference(args.noise_ref)
    for key in ("data", "train_path", "test_path"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if schemes is not None:
        overrides["schemes"] = schemes
    return dataclasses.replace(cfg, **overrides)


def _resolve_output(cfg: ExperimentConfig, args: argparse.Namespace) -> str:
    if args.output_dir is not None:
        directory = args.output_dir
    else:
        directory = os.environ.get("AIRFED_OUTPUT_DIR", cfg.output_dir)
    return os.path.join(directory, args.output)


def _execute(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    table = run_experiment(cfg)
    path = _resolve_output(cfg, args)
    write_metrics(table, path)
    print(f"wrote {len(table.rows)} rows to {path}")
    print(format_summary(summarize(table)))
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    schemes = (args.scheme,) if args.scheme else None
    cfg = _build_config(args, schemes)
    if len(cfg.schemes) != 1:
        raise AirfedError("'run' takes exactly one scheme; use 'sweep' for several")
    return _execute(cfg, args)


def _cmd_sweep(args: argparse.Namespace) -> int:
    if args.schemes:
        schemes = tuple(args.schemes)
    elif args.config:
        schemes = None  # keep whatever the file configured
    else:
        schemes = DEFAULT_SWEEP
    cfg = _build_config(args, schemes)
    return _execute(cfg, args)


def _cmd_demo(args: argparse.Namespace) -> int:
    a, b = exhaustive_code_pair_tensors(args.bits_a, args.bits_b)
    report = qam_superposition_demo(a, b)
    print(f"code pairs               : {a.size} ({args.bits_a}-bit x {args.bits_b}-bit)")
    print(f"digital QAM mismatch     : {report.mismatch_fraction:.6f}")
    print(f"analog amplitude mismatch: {report.analog_mismatch_fraction:.6f}")
    if report.origin_offset:
        print("note: square QAM has no origin point, so even zero codes land off-grid")
    if args.json:
        payload = {
            "bits_a": args.bits_a,
            "bits_b": args.bits_b,
            "pairs": int(a.size),
            "digital_mismatch_fraction": report.mismatch_fraction,
            "analog_mismatch_fraction": report.analog_mismatch_fraction,
            "origin_offset": report.origin_offset,
        }
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.json}")
    return 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    table = read_metrics(args.csv_path)
    print(format_summary(summarize(table)))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="airfed",
        description="Simulate federated averaging over an analog superposition "
                    "channel with mixed-precision clients.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scheme and write a metrics CSV")
    p_run.add_argument("--scheme", help='scheme string, e.g. "[16,4,4]"')
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a list of schemes")
    p_sweep.add_argument("--schemes", nargs="*",
                         help='scheme strings, e.g. "[16,4,4]" "[4,4,4]"')
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_demo = sub.add_parser(
        "demo-eq3",
        help="exhaustive digital-vs-analog superposition mismatch report")
    p_demo.add_argument("--bits-a", type=int, default=4, dest="bits_a")
    p_demo.add_argument("--bits-b", type=int, default=8, dest="bits_b")
    p_demo.add_argument("--json", help="also write the report as JSON")
    p_demo.set_defaults(func=_cmd_demo)

    p_sum = sub.add_parser("summarize", help="summarize an existing metrics CSV")
    p_sum.add_argument("csv_path")
    p_sum.set_defaults(func=_cmd_summarize)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AirfedError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
