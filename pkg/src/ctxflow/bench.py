"""Experiment configuration, grid execution, results persistence, reports.

A config is a flat text file of dotted ``key = value`` lines. ``run_grid``
executes every technique x features x seed cell against one dataset and
appends rows to a results CSV (resumable: existing cells are skipped).
``emit_report`` renders per-interval markdown tables with bolded minima,
avgNRMSE/avgNMAE columns and stars for methods beating NoContext;
``measure_overhead`` compares training time against the NoContext baseline.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .backbone import WindowSpec, window_samples
from .context import (
    ContextManifest,
    build_contexts,
    parse_feature_selector,
    selector_label,
)
from .datasets import (
    EffectConfig,
    FlowSeries,
    IngestError,
    LocationSet,
    RawContextTables,
    SplitSpec,
    chronological_split,
    synth_generate,
)
from .fileio import (
    read_flow_cache,
    read_holidays,
    read_locations,
    read_pois,
    read_trips,
    read_weather,
)
from .datasets import HolidayTable, PoiTable, WeatherTable, aggregate_trips
from .fusion import ALL_TECHNIQUES, FusionSpec, Pipeline
from .graphs import THRESHOLD_PRESETS, build_graphs
from .training import (
    FlowNormalizer,
    SplitData,
    TrainConfig,
    avg_normalized,
    build_split_data,
    evaluate,
    train,
)

logger = logging.getLogger(__name__)

RESULT_FIELDS = ("dataset", "interval", "technique", "features", "seed",
                 "rmse", "mae", "train_seconds", "epochs_run")

OUT_DIR_ENV = "CTXFLOW_OUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    interval: int
    technique: str
    features: str
    seed: int
    rmse: float
    mae: float
    train_seconds: float
    epochs_run: int

    def __post_init__(self):
        if not (math.isfinite(self.rmse) and math.isfinite(self.mae)):
            raise ConfigError(f"non-finite metrics in result row {self}")
        if self.rmse < 0 or self.mae < 0:
            raise ConfigError(f"negative metrics in result row {self}")

    @property
    def cell(self) -> tuple:
        return (self.dataset, self.interval, self.technique, self.features, self.seed)


def append_result(path: Path, row: ResultRow) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(RESULT_FIELDS)
        writer.writerow([
            row.dataset, row.interval, row.technique, row.features, row.seed,
            repr(row.rmse), repr(row.mae), repr(row.train_seconds), row.epochs_run,
        ])


def read_results(path: Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RESULT_FIELDS:
            raise ConfigError(f"{path}: expected header {','.join(RESULT_FIELDS)}")
        rows = []
        for raw in reader:
            if not raw:
                continue
            rows.append(ResultRow(
                dataset=raw[0], interval=int(raw[1]), technique=raw[2], features=raw[3],
                seed=int(raw[4]), rmse=float(raw[5]), mae=float(raw[6]),
                train_seconds=float(raw[7]), epochs_run=int(raw[8]),
            ))
        return rows


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    n_locations: int = 20
    n_intervals: int = 1344
    seed: int = 0
    effects: EffectConfig = EffectConfig()


@dataclass(frozen=True)
class FilesSpec:
    flow: str | None = None
    trips: str | None = None
    locations: str | None = None
    weather: str | None = None
    holidays: str | None = None
    pois: str | None = None
    start: str | None = None
    n_intervals: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_name: str = "synth"
    dataset_kind: str = "synth"
    synth: SynthSpec = SynthSpec()
    files: FilesSpec = FilesSpec()
    interval: int = 60
    techniques: tuple[str, ...] = ("NoContext",)
    features: tuple[str, ...] = ("None",)
    seeds: tuple[int, ...] = (0,)
    graphs_use: tuple[str, ...] = ("distance", "correlation")
    graph_preset: str = "bike"
    distance_threshold_m: float | None = None
    correlation_threshold: float | None = None
    graph_metric: str = "haversine"
    window: WindowSpec = WindowSpec()
    hidden: int = 64
    aggregation: str = "mean"
    embed_dim: int = 16
    family_dims: tuple[int, int, int, int] = (8, 1, 8, 8)
    lstm_hidden: int = 16
    add_width: int | None = None
    early_width: int | None = None
    outer_sigmoid: bool = True
    pois_encoding: str = "density"
    weather_states: str = "onehot"
    split: SplitSpec = SplitSpec()
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 10
    sweep_dims: tuple[int, ...] = ()
    out_dir: str = "results"

    def thresholds(self) -> tuple[float, float]:
        preset = THRESHOLD_PRESETS[self.graph_preset]
        distance = self.distance_threshold_m if self.distance_threshold_m is not None else preset[0]
        correlation = self.correlation_threshold if self.correlation_threshold is not None else preset[1]
        return distance, correlation

    def fusion_spec(self, technique: str) -> FusionSpec:
        wea, holi, tp, pois = self.family_dims
        return FusionSpec(
            technique=technique,
            embed_dim=self.embed_dim,
            family_dims=(("weather", wea), ("holiday", holi),
                         ("temporal_position", tp), ("pois", pois)),
            lstm_hidden=self.lstm_hidden,
            early_width=self.early_width,
            add_width=self.add_width,
            outer_sigmoid=self.outer_sigmoid,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           patience=self.patience, seed=seed)


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = raw.strip()
    return values


def _validate_techniques(tokens) -> tuple[str, ...]:
    for token in tokens:
        base = token.split("@", 1)[0]
        if base not in ALL_TECHNIQUES:
            raise ConfigError(
                f"unknown technique {token!r}; expected one of {', '.join(ALL_TECHNIQUES)}"
            )
    return tuple(tokens)


def _validate_features(tokens) -> tuple[str, ...]:
    normalized = []
    for token in tokens:
        try:
            normalized.append(selector_label(parse_feature_selector(token)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return tuple(normalized)


def build_config(values: dict[str, str], preset: str | None = None) -> ExperimentConfig:
    """Turn raw dotted keys into a validated ExperimentConfig."""
    known = dict(values)

    def pop(key, default=None):
        return known.pop(key, default)

    def pop_int(key, default):
        raw = pop(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None

    def pop_float(key, default):
        raw = pop(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None

    effects = EffectConfig(
        base_low=pop_float("dataset.synth.base_low", 20.0),
        base_high=pop_float("dataset.synth.base_high", 40.0),
        diurnal=pop_float("dataset.synth.diurnal", 8.0),
        weekend=pop_float("dataset.synth.weekend", -4.0),
        holiday=pop_float("dataset.synth.holiday", -12.0),
        weather=pop_float("dataset.synth.weather", 0.0),
        noise=pop_float("dataset.synth.noise", 1.0),
        holiday_rate=pop_float("dataset.synth.holiday_rate", 0.1),
        start_time=datetime.fromisoformat(pop("dataset.synth.start", "2024-01-01T00:00:00")),
    )
    synth = SynthSpec(
        n_locations=pop_int("dataset.synth.n_locations", 20),
        n_intervals=pop_int("dataset.synth.n_intervals", 1344),
        seed=pop_int("dataset.synth.seed", 0),
        effects=effects,
    )
    files = FilesSpec(
        flow=pop("dataset.files.flow"),
        trips=pop("dataset.files.trips"),
        locations=pop("dataset.files.locations"),
        weather=pop("dataset.files.weather"),
        holidays=pop("dataset.files.holidays"),
        pois=pop("dataset.files.pois"),
        start=pop("dataset.files.start"),
        n_intervals=pop_int("dataset.files.n_intervals", None),
    )

    kind = pop("dataset.kind", "synth")
    if kind not in ("synth", "files"):
        raise ConfigError(f"dataset.kind: expected synth or files, got {kind!r}")

    interval = pop_int("interval", 60)
    if interval not in (30, 60, 120):
        raise ConfigError(f"interval: expected 30, 60 or 120, got {interval}")

    techniques = _validate_techniques(_parse_list(pop("techniques", "NoContext")))
    features = _validate_features(_parse_list(pop("features", "None")))
    seeds = tuple(int(s) for s in _parse_list(pop("seeds", "0")))
    if not seeds:
        raise ConfigError("seeds: need at least one seed")

    graphs_use = tuple(_parse_list(pop("graphs.use", "distance,correlation")))
    for kind_name in graphs_use:
        if kind_name not in ("distance", "correlation"):
            raise ConfigError(f"graphs.use: unknown graph kind {kind_name!r}")
    graph_preset = pop("graphs.preset", "bike")
    if graph_preset not in THRESHOLD_PRESETS:
        raise ConfigError(f"graphs.preset: expected one of {sorted(THRESHOLD_PRESETS)}, got {graph_preset!r}")

    window = WindowSpec(
        closeness=pop_int("window.closeness", 6),
        daily=pop_int("window.daily", 7),
        weekly=pop_int("window.weekly", 4),
    )

    family_raw = pop("fusion.family_dims", "8-1-8-8")
    try:
        family_dims = tuple(int(d) for d in family_raw.split("-"))
    except ValueError:
        family_dims = ()
    if len(family_dims) != 4:
        raise ConfigError(f"fusion.family_dims: expected four widths like 8-1-8-8, got {family_raw!r}")

    add_width = pop_int("fusion.add_width", None)
    early_width = pop_int("fusion.early_width", None)

    pois_encoding = pop("context.pois_encoding", "density")
    weather_states = pop("context.weather_states", "onehot")
    aggregation = pop("backbone.aggregation", "mean")
    metric = pop("graphs.metric", "haversine")

    config = ExperimentConfig(
        dataset_name=pop("dataset.name", "synth"),
        dataset_kind=kind,
        synth=synth,
        files=files,
        interval=interval,
        techniques=techniques,
        features=features,
        seeds=seeds,
        graphs_use=graphs_use,
        graph_preset=graph_preset,
        distance_threshold_m=pop_float("graphs.distance_threshold_m", None),
        correlation_threshold=pop_float("graphs.correlation_threshold", None),
        graph_metric=metric,
        window=window,
        hidden=pop_int("backbone.hidden", 64),
        aggregation=aggregation,
        embed_dim=pop_int("fusion.embed_dim", 16),
        family_dims=family_dims,
        lstm_hidden=pop_int("fusion.lstm_hidden", 16),
        add_width=add_width,
        early_width=early_width,
        outer_sigmoid=_parse_bool(pop("fusion.outer_sigmoid", "true"), "fusion.outer_sigmoid"),
        pois_encoding=pois_encoding,
        weather_states=weather_states,
        split=SplitSpec(
            train=pop_float("split.train", 0.8),
            val=pop_float("split.val", 0.1),
            test=pop_float("split.test", 0.1),
        ),
        epochs=pop_int("train.epochs", 200),
        batch_size=pop_int("train.batch_size", 32),
        lr=pop_float("train.lr", 1e-3),
        patience=pop_int("train.patience", 10),
        sweep_dims=tuple(int(d) for d in _parse_list(pop("sweep.dims", ""))),
        out_dir=pop("out", "results"),
    )
    if known:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(known))}")
    if preset is not None:
        config = apply_preset(config, preset)
    return config


def apply_preset(config: ExperimentConfig, preset: str) -> ExperimentConfig:
    """Named shortcuts; ``guideline`` is the recommended default recipe
    (Raw-Gating with holiday + temporal position)."""
    if preset == "guideline":
        return replace(config, techniques=("Raw-Gating",), features=("Holi-TP",))
    raise ConfigError(f"unknown preset {preset!r}; available: guideline")


def parse_config(path: str | Path, preset: str | None = None) -> ExperimentConfig:
    return build_config(parse_config_text(Path(path).read_text()), preset)


# -- dataset loading -----------------------------------------------------------


@dataclass
class LoadedDataset:
    name: str
    flow: FlowSeries
    tables: RawContextTables
    locations: LocationSet


def load_dataset(config: ExperimentConfig) -> LoadedDataset:
    if config.dataset_kind == "synth":
        bundle = synth_generate(config.synth.n_locations, config.synth.n_intervals,
                                config.interval, config.synth.effects, config.synth.seed)
        return LoadedDataset(config.dataset_name, bundle.flow, bundle.tables, bundle.locations)

    files = config.files
    if files.locations is None:
        raise ConfigError("dataset.files.locations is required for file datasets")
    locations = read_locations(files.locations)
    if files.flow:
        flow, ids = read_flow_cache(files.flow, config.interval)
        if ids != locations.ids:
            raise ConfigError("flow cache location ids do not match the locations file")
    elif files.trips:
        if files.start is None or files.n_intervals is None:
            raise ConfigError("dataset.files.start and dataset.files.n_intervals are required with trips input")
        flow, _ = aggregate_trips(read_trips(files.trips), locations, config.interval,
                                  datetime.fromisoformat(files.start), files.n_intervals)
    else:
        raise ConfigError("file datasets need dataset.files.flow or dataset.files.trips")

    weather = read_weather(files.weather) if files.weather else WeatherTable([], {}, [])
    holidays = read_holidays(files.holidays) if files.holidays else HolidayTable({})
    pois = read_pois(files.pois) if files.pois else PoiTable([])
    return LoadedDataset(config.dataset_name, flow, RawContextTables(weather, holidays, pois),
                         locations)


# -- grid execution --------------------------------------------------------------


def _sweep_label(technique: str, dim: int) -> str:
    if technique.startswith("MultiEmb"):
        return f"{technique}@{dim}-1-{dim}-{dim}"
    return f"{technique}@{dim}"


def expand_grid(config: ExperimentConfig) -> list[tuple[str, str, int]]:
    """All (technique, features, seed) cells, including embedding sweeps."""
    labels: list[str] = []
    for technique in config.techniques:
        if config.sweep_dims and ("Emb" in technique and "@" not in technique):
            labels.extend(_sweep_label(technique, d) for d in config.sweep_dims)
        else:
            labels.append(technique)
    return [(label, feats, seed)
            for label in labels for feats in config.features for seed in config.seeds]


def _spec_for_label(config: ExperimentConfig, label: str) -> FusionSpec:
    base, _, dims = label.partition("@")
    spec = config.fusion_spec(base)
    if not dims:
        return spec
    widths = tuple(int(d) for d in dims.split("-"))
    if len(widths) == 1:
        return replace(spec, embed_dim=widths[0])
    if len(widths) == 4:
        return replace(spec, family_dims=(("weather", widths[0]), ("holiday", widths[1]),
                                          ("temporal_position", widths[2]), ("pois", widths[3])))
    raise ConfigError(f"bad sweep dims in technique label {label!r}")


@dataclass
class PreparedFeatures:
    manifest: ContextManifest
    train_data: SplitData
    val_data: SplitData
    test_data: SplitData


def prepare_dataset(config: ExperimentConfig, dataset: LoadedDataset):
    """Split, graphs and normalizer shared by every cell of a grid."""
    flow = dataset.flow
    min_target = config.window.first_valid_target(config.interval)
    split = chronological_split(flow, config.split, min_target)
    distance_m, correlation = config.thresholds()
    graphs = build_graphs(config.graphs_use, dataset.locations,
                          flow.values[split.train[0]:split.train[1]],
                          distance_m, correlation, config.graph_metric)
    normalizer = FlowNormalizer.fit(flow.values, split.train)
    ranges = {"train": split.train, "val": split.val, "test": split.test}
    samples = {name: window_samples(flow, config.window, rng)[0] for name, rng in ranges.items()}
    props = [g.propagation for g in graphs]
    return split, props, normalizer, samples


def prepare_features(config: ExperimentConfig, dataset: LoadedDataset, split, normalizer,
                     samples, features_label: str) -> PreparedFeatures:
    families = parse_feature_selector(features_label)
    temporal, spatial = build_contexts(dataset.flow, dataset.tables, dataset.locations,
                                       families, split.train, config.pois_encoding,
                                       config.weather_states)
    manifest = ContextManifest.from_contexts(temporal, spatial)
    builds = {
        name: build_split_data(dataset.flow.values, normalizer, temporal.values,
                               spatial.values, samples[name])
        for name in ("train", "val", "test")
    }
    return PreparedFeatures(manifest, builds["train"], builds["val"], builds["test"])


def run_cell(config: ExperimentConfig, dataset: LoadedDataset, prepared: PreparedFeatures,
             props, normalizer, technique_label: str, features_label: str,
             seed: int) -> ResultRow:
    """Train and evaluate one grid cell; deterministic per seed."""
    spec = _spec_for_label(config, technique_label)
    pipeline = Pipeline(spec, prepared.manifest, config.window, config.hidden,
                        len(props), seed, aggregation=config.aggregation)
    result = train(pipeline, prepared.train_data, prepared.val_data, props,
                   config.train_config(seed), normalizer)
    test_rmse, test_mae = evaluate(pipeline, prepared.test_data, props, normalizer)
    return ResultRow(
        dataset=dataset.name, interval=config.interval, technique=technique_label,
        features=features_label, seed=seed, rmse=test_rmse, mae=test_mae,
        train_seconds=result.seconds, epochs_run=result.epochs_run,
    )


def run_grid(config: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Execute every missing grid cell, appending to ``<out>/results.csv``.

    Per-cell failures are logged to ``<out>/errors.log`` and the grid moves
    on; rerunning a completed grid appends nothing.
    """
    out = Path(out_dir if out_dir is not None else os.environ.get(OUT_DIR_ENV, config.out_dir))
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.csv"
    errors_path = out / "errors.log"
    done = {row.cell for row in read_results(results_path)} if results_path.exists() else set()

    dataset = load_dataset(config)
    split, props, normalizer, samples = prepare_dataset(config, dataset)
    features_cache: dict[str, PreparedFeatures] = {}

    for technique_label, features_label, seed in expand_grid(config):
        cell = (dataset.name, config.interval, technique_label, features_label, seed)
        if cell in done:
            continue
        try:
            if features_label not in features_cache:
                features_cache[features_label] = prepare_features(
                    config, dataset, split, normalizer, samples, features_label)
            row = run_cell(config, dataset, features_cache[features_label], props,
                           normalizer, technique_label, features_label, seed)
        except Exception as exc:
            logger.error("cell %s failed: %s", cell, exc)
            with open(errors_path, "a") as fh:
                fh.write(f"{cell}: {type(exc).__name__}: {exc}\n")
            continue
        append_result(results_path, row)
        done.add(cell)
        logger.info("cell %s: rmse=%.4f mae=%.4f (%.1fs, %d epochs)",
                    cell, row.rmse, row.mae, row.train_seconds, row.epochs_run)
    return results_path


# -- reporting --------------------------------------------------------------------


@dataclass
class MethodSummary:
    label: str
    technique: str
    features: str
    rmse: dict[str, float] = field(default_factory=dict)
    mae: dict[str, float] = field(default_factory=dict)
    avg_nrmse: float | None = None
    avg_nmae: float | None = None
    starred: bool = False


@dataclass
class IntervalSummary:
    interval: int
    datasets: list[str]
    methods: list[MethodSummary]
    has_baseline: bool


def _method_labels(pairs: list[tuple[str, str]]) -> dict[tuple[str, str], str]:
    techniques = {t for t, _ in pairs}
    feature_sets = {f for _, f in pairs}
    labels = {}
    for technique, features in pairs:
        if len(feature_sets) == 1 or (technique == "NoContext" and len(techniques) > 1):
            labels[(technique, features)] = technique
        elif len(techniques) == 1:
            labels[(technique, features)] = features
        else:
            labels[(technique, features)] = f"{technique} ({features})"
    return labels


def summarize(rows: list[ResultRow]) -> list[IntervalSummary]:
    """Seed-averaged per-interval metric tables with normalized aggregates."""
    summaries = []
    for interval in sorted({r.interval for r in rows}):
        subset = [r for r in rows if r.interval == interval]
        datasets = list(dict.fromkeys(r.dataset for r in subset))
        pairs = list(dict.fromkeys((r.technique, r.features) for r in subset))
        labels = _method_labels(pairs)
        methods = []
        for technique, features in pairs:
            summary = MethodSummary(labels[(technique, features)], technique, features)
            for ds in datasets:
                cells = [r for r in subset
                         if (r.technique, r.features) == (technique, features) and r.dataset == ds]
                if cells:
                    summary.rmse[ds] = float(np.mean([r.rmse for r in cells]))
                    summary.mae[ds] = float(np.mean([r.mae for r in cells]))
            methods.append(summary)

        complete = [m for m in methods if len(m.rmse) == len(datasets)]
        if complete:
            rmse_matrix = np.array([[m.rmse[ds] for ds in datasets] for m in complete])
            mae_matrix = np.array([[m.mae[ds] for ds in datasets] for m in complete])
            for m, nrmse, nmae in zip(complete, avg_normalized(rmse_matrix),
                                      avg_normalized(mae_matrix)):
                m.avg_nrmse = float(nrmse)
                m.avg_nmae = float(nmae)

        baseline = next((m for m in methods if m.technique == "NoContext"
                         and m.avg_nrmse is not None), None)
        if baseline is not None:
            for m in methods:
                m.starred = (m is not baseline and m.avg_nrmse is not None
                             and m.avg_nrmse < baseline.avg_nrmse)
        summaries.append(IntervalSummary(interval, datasets, methods, baseline is not None))
    return summaries


def _fmt(value: float) -> str:
    return f"{value:.4g}"


def _metric_table(summary: IntervalSummary, metric: str, avg_name: str) -> list[str]:
    datasets = summary.datasets
    values = {m.label: getattr(m, metric) for m in summary.methods}
    minima = {ds: min(v[ds] for v in values.values() if ds in v) for ds in datasets}
    lines = [
        "| Method | " + " | ".join(datasets) + f" | {avg_name} |",
        "|---" * (len(datasets) + 2) + "|",
    ]
    for m in summary.methods:
        cells = []
        for ds in datasets:
            if ds not in getattr(m, metric):
                cells.append("-")
                continue
            v = getattr(m, metric)[ds]
            text = _fmt(v)
            cells.append(f"**{text}**" if v == minima[ds] else text)
        avg = m.avg_nrmse if metric == "rmse" else m.avg_nmae
        avg_text = "-" if avg is None else f"{avg:.3f}"
        if m.starred:
            avg_text += " \\*"
        lines.append(f"| {m.label} | " + " | ".join(cells) + f" | {avg_text} |")
    return lines


def emit_report(results_path: str | Path, out_path: str | Path | None = None) -> str:
    """Render markdown tables (bold minima, avgN columns, stars vs NoContext)."""
    rows = read_results(Path(results_path))
    if not rows:
        raise ConfigError(f"{results_path}: no result rows to report")
    main_rows = [r for r in rows if "@" not in r.technique]
    sweep_rows = [r for r in rows if "@" in r.technique]
    lines = ["# Benchmark report", ""]
    for summary in summarize(main_rows):
        lines.append(f"## {summary.interval}-minute interval")
        lines.append("")
        if not summary.has_baseline:
            lines.append("_No NoContext baseline in these results; star markers omitted._")
            logger.warning("interval %d: no NoContext row, star column omitted", summary.interval)
            lines.append("")
        lines.append("### RMSE")
        lines.extend(_metric_table(summary, "rmse", "avgNRMSE"))
        lines.append("")
        lines.append("### MAE")
        lines.extend(_metric_table(summary, "mae", "avgNMAE"))
        lines.append("")
    if sweep_rows:
        lines.extend(_sweep_section(sweep_rows))
    text = "\n".join(lines)
    if out_path is not None:
        Path(out_path).write_text(text)
    return text


def _sweep_section(rows: list[ResultRow]) -> list[str]:
    lines = ["## Embedding dimension sweep", ""]
    bases = list(dict.fromkeys(r.technique.split("@")[0] for r in rows))
    datasets = list(dict.fromkeys(r.dataset for r in rows))
    for base in bases:
        base_rows = [r for r in rows if r.technique.startswith(base + "@")]
        dims = list(dict.fromkeys(r.technique.split("@")[1] for r in base_rows))
        lines.append(f"### {base}")
        lines.append("| Dims | " + " | ".join(f"{ds} RMSE" for ds in datasets) + " |")
        lines.append("|---" * (len(datasets) + 1) + "|")
        for dim in dims:
            cells = []
            for ds in datasets:
                matches = [r.rmse for r in base_rows
                           if r.technique.endswith("@" + dim) and r.dataset == ds]
                cells.append(_fmt(float(np.mean(matches))) if matches else "-")
            lines.append(f"| {dim} | " + " | ".join(cells) + " |")
        lines.append("")
    return lines


def measure_overhead(results_path: str | Path) -> tuple[dict, str]:
    """Per-technique mean training-time ratio against the NoContext baseline.

    Returns a {(dataset, interval): {technique: ratio}} map plus a rendered
    table; NoContext itself appears with ratio 1.0.
    """
    rows = read_results(Path(results_path))
    groups: dict[tuple[str, int], list[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.dataset, row.interval), []).append(row)
    ratios: dict[tuple[str, int], dict[str, float]] = {}
    lines = ["| Dataset | Interval | Technique | Time ratio vs NoContext |", "|---|---|---|---|"]
    for key in sorted(groups):
        subset = groups[key]
        base = [r.train_seconds for r in subset if r.technique == "NoContext"]
        if not base:
            raise ConfigError(f"no NoContext baseline for dataset {key[0]} at {key[1]} minutes")
        baseline = float(np.mean(base))
        if baseline <= 0:
            raise ConfigError(f"NoContext baseline time is not positive for {key}")
        ratios[key] = {}
        for technique in dict.fromkeys(r.technique for r in subset):
            seconds = [r.train_seconds for r in subset if r.technique == technique]
            ratio = float(np.mean(seconds)) / baseline
            ratios[key][technique] = ratio
            lines.append(f"| {key[0]} | {key[1]} | {technique} | {ratio:.3f} |")
    return ratios, "\n".join(lines)
