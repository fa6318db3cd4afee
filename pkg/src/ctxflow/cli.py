"""Command-line entry point.

Subcommands: ``ingest`` (raw trip files -> flow matrix cache), ``synth``
(write a synthetic dataset bundle), ``run`` (execute the experiment grid),
``report`` (markdown tables from a results file), ``overhead`` (training-time
ratios vs NoContext). The output directory resolves as --out flag, then the
CTXFLOW_OUT environment variable, then the config's ``out`` key.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime
from pathlib import Path

from . import bench
from .datasets import aggregate_trips
from .fileio import (
    read_locations,
    read_trips,
    write_flow_cache,
    write_holidays,
    write_locations,
    write_pois,
    write_weather,
)


def _out_dir(args, config) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get(bench.OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(config.out_dir if config is not None else "results")


def _load_config(args) -> bench.ExperimentConfig:
    if args.config is None:
        raise bench.ConfigError("--config PATH is required for this command")
    return bench.parse_config(args.config, preset=getattr(args, "preset", None))


def cmd_ingest(args) -> int:
    config = _load_config(args)
    files = config.files
    if not (files.trips and files.locations and files.start and files.n_intervals):
        raise bench.ConfigError(
            "ingest needs dataset.files.trips, .locations, .start and .n_intervals")
    locations = read_locations(files.locations)
    series, stats = aggregate_trips(read_trips(files.trips), locations, config.interval,
                                    datetime.fromisoformat(files.start), files.n_intervals)
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    cache = out / "flow.csv"
    write_flow_cache(cache, series, locations.ids)
    print(f"wrote {cache} ({series.n_intervals} intervals x {series.n_locations} locations; "
          f"{stats.accepted} records binned, {stats.dropped_out_of_span} outside the span)")
    return 0


def cmd_synth(args) -> int:
    config = _load_config(args)
    bundle = bench.synth_generate(config.synth.n_locations, config.synth.n_intervals,
                                  config.interval, config.synth.effects, config.synth.seed)
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    write_flow_cache(out / "flow.csv", bundle.flow, bundle.locations.ids)
    write_locations(out / "locations.csv", bundle.locations)
    write_weather(out / "weather.csv", bundle.tables.weather)
    write_holidays(out / "holidays.csv", bundle.tables.holidays)
    write_pois(out / "pois.csv", bundle.tables.pois)
    print(f"wrote synthetic bundle to {out} "
          f"({bundle.flow.n_intervals} intervals x {bundle.flow.n_locations} locations)")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args)
    if args.seed is not None:
        config = bench.replace(config, seeds=(args.seed,))
    results = bench.run_grid(config, _out_dir(args, config))
    print(f"results appended to {results}")
    return 0


def _results_path(args, config) -> Path:
    if args.results:
        return Path(args.results)
    return _out_dir(args, config) / "results.csv"


def cmd_report(args) -> int:
    config = bench.parse_config(args.config) if args.config else None
    results = _results_path(args, config)
    out = results.parent / "report.md"
    text = bench.emit_report(results, out)
    print(text)
    print(f"\n(report written to {out})", file=sys.stderr)
    return 0


def cmd_overhead(args) -> int:
    config = bench.parse_config(args.config) if args.config else None
    _, table = bench.measure_overhead(_results_path(args, config))
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxflow",
        description="Context-aware crowd flow forecasting benchmark",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per grid cell")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, preset=False, results=False):
        p.add_argument("--config", help="experiment config file (dotted key = value lines)")
        p.add_argument("--out", help="output directory override")
        if seed:
            p.add_argument("--seed", type=int, help="run only this seed")
        if preset:
            p.add_argument("--preset", choices=["guideline"],
                           help="guideline: Raw-Gating with Holi-TP features")
        if results:
            p.add_argument("--results", help="results CSV (defaults to <out>/results.csv)")

    common(sub.add_parser("ingest", help="aggregate raw trips into a flow matrix cache"))
    common(sub.add_parser("synth", help="generate a synthetic dataset bundle"))
    common(sub.add_parser("run", help="execute the experiment grid"), seed=True, preset=True)
    common(sub.add_parser("report", help="emit markdown result tables"), results=True)
    common(sub.add_parser("overhead", help="training-time ratios vs NoContext"), results=True)
    return parser


HANDLERS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "run": cmd_run,
    "report": cmd_report,
    "overhead": cmd_overhead,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except (bench.ConfigError, bench.IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
