"""Flow-series ingestion and synthetic data.

Turns raw trip records into per-interval counts, aligns hourly weather onto
30/60/120-minute grids, produces chronological splits, and generates seeded
synthetic datasets with known context effects for end-to-end testing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

logger = logging.getLogger(__name__)

INTERVALS = (30, 60, 120)


class IngestError(ValueError):
    """Raw input violates the declared file or table contract."""


# -- core types ---------------------------------------------------------------


@dataclass(frozen=True)
class LocationSet:
    """Observation sites: unique ids with latitude/longitude in degrees."""

    ids: tuple[str, ...]
    coords: np.ndarray  # (N, 2) lat/lon

    def __post_init__(self):
        if len(self.ids) < 2:
            raise IngestError("need at least 2 locations")
        if len(set(self.ids)) != len(self.ids):
            dupes = sorted({i for i in self.ids if self.ids.count(i) > 1})
            raise IngestError(f"duplicate location ids: {dupes}")
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (len(self.ids), 2) or not np.all(np.isfinite(coords)):
            raise IngestError("coords must be a finite (N, 2) array")
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return len(self.ids)

    def index(self) -> dict[str, int]:
        return {loc: i for i, loc in enumerate(self.ids)}


@dataclass
class FlowSeries:
    """Per-interval, per-location flow counts on a regular time grid."""

    interval_minutes: int
    start_time: datetime
    values: np.ndarray  # (T, N), non-negative

    def __post_init__(self):
        if self.interval_minutes not in INTERVALS:
            raise IngestError(f"interval must be one of {INTERVALS}, got {self.interval_minutes}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise IngestError("flow values must be 2-D (intervals x locations)")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise IngestError("flow values must be finite and non-negative")

    @property
    def n_intervals(self) -> int:
        return self.values.shape[0]

    @property
    def n_locations(self) -> int:
        return self.values.shape[1]

    @property
    def slots_per_day(self) -> int:
        return 1440 // self.interval_minutes

    def timestamps(self) -> list[datetime]:
        step = timedelta(minutes=self.interval_minutes)
        return [self.start_time + i * step for i in range(self.n_intervals)]


@dataclass
class WeatherTable:
    """Hourly (or interval-aligned) weather rows: numeric columns plus a state string."""

    timestamps: list[datetime]
    numeric: dict[str, np.ndarray]
    states: list[str]

    def __post_init__(self):
        n = len(self.timestamps)
        for name, col in self.numeric.items():
            col = np.asarray(col, dtype=np.float64)
            if col.shape != (n,):
                raise IngestError(f"weather column {name!r} has {col.shape[0] if col.ndim else 0} rows, expected {n}")
            self.numeric[name] = col
        if len(self.states) != n:
            raise IngestError("weather state column length mismatch")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b < a:
                raise IngestError("weather timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class HolidayTable:
    """Date -> 0/1 holiday flag."""

    flags: dict[date, int]

    def __post_init__(self):
        for d, f in self.flags.items():
            if f not in (0, 1):
                raise IngestError(f"holiday flag for {d} must be 0 or 1, got {f!r}")


@dataclass
class PoiTable:
    """(location_id, category, count) rows."""

    rows: list[tuple[str, str, float]]

    def __post_init__(self):
        for loc, cat, count in self.rows:
            if count < 0:
                raise IngestError(f"negative POI count for ({loc}, {cat})")

    def categories(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, cat, _ in self.rows:
            seen.setdefault(cat)
        return sorted(seen)


@dataclass
class RawContextTables:
    weather: WeatherTable
    holidays: HolidayTable
    pois: PoiTable


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test fractions; must be positive and sum to 1."""

    train: float = 0.8
    val: float = 0.1
    test: float = 0.1

    def __post_init__(self):
        parts = (self.train, self.val, self.test)
        if any(p <= 0 for p in parts):
            raise IngestError(f"split fractions must all be positive, got {parts}")
        if not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise IngestError(f"split fractions must sum to 1, got {parts}")


@dataclass(frozen=True)
class SplitRanges:
    """Half-open interval-index ranges, ordered train < val < test."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]


# -- ingestion ----------------------------------------------------------------


@dataclass
class TripStats:
    accepted: int
    dropped_out_of_span: int


def _parse_timestamp(raw, row: int) -> datetime:
    if isinstance(raw, datetime):
        return raw
    try:
        return datetime.fromisoformat(str(raw).strip())
    except ValueError:
        raise IngestError(f"row {row}: unparseable timestamp {raw!r}") from None


def aggregate_trips(records, locations: LocationSet, interval_minutes: int,
                    start_time: datetime, n_intervals: int) -> tuple[FlowSeries, TripStats]:
    """Count trip records into half-open interval bins [t, t+1) per location.

    Records outside [start_time, start_time + n_intervals * interval) are
    dropped and counted; unknown location ids abort with the full offender
    list. Rows are numbered from 1 in error messages.
    """
    if n_intervals <= 0:
        raise IngestError("n_intervals must be positive")
    index = locations.index()
    values = np.zeros((n_intervals, len(locations)), dtype=np.float64)
    span_minutes = n_intervals * interval_minutes
    unknown: dict[str, None] = {}
    dropped = 0
    accepted = 0
    for row, (loc, ts) in enumerate(records, start=1):
        when = _parse_timestamp(ts, row)
        col = index.get(loc)
        if col is None:
            unknown.setdefault(loc)
            continue
        offset = (when - start_time).total_seconds() / 60.0
        if offset < 0 or offset >= span_minutes:
            dropped += 1
            continue
        values[int(offset // interval_minutes), col] += 1
        accepted += 1
    if unknown:
        raise IngestError(f"unknown location ids: {sorted(unknown)}")
    series = FlowSeries(interval_minutes, start_time, values)
    return series, TripStats(accepted=accepted, dropped_out_of_span=dropped)


def _floor_to_hour(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


def align_weather(weather: WeatherTable, interval_minutes: int, start_time: datetime,
                  n_intervals: int) -> tuple[WeatherTable, int]:
    """Project hourly weather rows onto the flow grid.

    Each interval takes the row of the hour its start falls in: 30-minute
    grids repeat every hourly row twice, 60-minute grids pass through, and
    120-minute grids keep the first hour of each block. Missing hours are
    filled by carrying the last observed row forward (counted and logged).
    """
    if interval_minutes not in INTERVALS:
        raise IngestError(f"interval must be one of {INTERVALS}")
    by_hour = {_floor_to_hour(ts): i for i, ts in enumerate(weather.timestamps)}
    step = timedelta(minutes=interval_minutes)
    picked: list[int] = []
    gaps = 0
    last: int | None = None
    for i in range(n_intervals):
        hour = _floor_to_hour(start_time + i * step)
        row = by_hour.get(hour)
        if row is None:
            if last is None:
                raise IngestError(f"no weather coverage at or before {hour.isoformat()}")
            gaps += 1
            row = last
        picked.append(row)
        last = row
    if gaps:
        logger.warning("weather alignment carried rows forward over %d gap interval(s)", gaps)
    aligned = WeatherTable(
        timestamps=[start_time + i * step for i in range(n_intervals)],
        numeric={name: col[picked] for name, col in weather.numeric.items()},
        states=[weather.states[i] for i in picked],
    )
    return aligned, gaps


def chronological_split(series: FlowSeries, spec: SplitSpec = SplitSpec(),
                        min_target_index: int = 0) -> SplitRanges:
    """Cut [0, T) into contiguous train/val/test ranges, oldest first.

    ``min_target_index`` is the first interval with enough history to form a
    model sample (window arithmetic is owned by the backbone); the train
    range must reach past it.
    """
    t = series.n_intervals
    a = int(t * spec.train)
    b = int(t * (spec.train + spec.val))
    if not (0 < a < b < t):
        raise IngestError(f"series of length {t} leaves an empty split range under {spec}")
    if min_target_index >= a:
        raise IngestError(
            f"train range [0, {a}) is shorter than the model window span "
            f"(first usable target index {min_target_index})"
        )
    return SplitRanges(train=(0, a), val=(a, b), test=(b, t))


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class EffectConfig:
    """Injected context effects for synthetic flow.

    flow[t][n] = max(0, base_n + diurnal * bump(slot) + weekend * is_weekend
                         + holiday * is_holiday + weather * temp_z + noise * eps)
    """

    base_low: float = 20.0
    base_high: float = 40.0
    diurnal: float = 8.0
    weekend: float = -4.0
    holiday: float = -12.0
    weather: float = 0.0
    noise: float = 1.0
    holiday_rate: float = 0.1
    start_time: datetime = datetime(2024, 1, 1)  # a Monday
    poi_categories: tuple[str, ...] = ("food", "office", "transit", "leisure")


@dataclass
class SynthBundle:
    flow: FlowSeries
    tables: RawContextTables
    locations: LocationSet


def synth_generate(n_locations: int, n_intervals: int, interval_minutes: int,
                   effects: EffectConfig = EffectConfig(), seed: int = 0) -> SynthBundle:
    """Seeded synthetic dataset whose context tables match the injected effects.

    Pure function of its arguments: the same call produces bit-identical
    arrays and tables.
    """
    if n_locations < 2 or n_intervals < 1:
        raise IngestError("synthetic dataset needs >=2 locations and >=1 interval")
    if interval_minutes not in INTERVALS:
        raise IngestError(f"interval must be one of {INTERVALS}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    start = effects.start_time

    ids = tuple(f"L{i:03d}" for i in range(n_locations))
    coords = np.column_stack([
        41.88 + rng.uniform(-0.05, 0.05, n_locations),
        -87.63 + rng.uniform(-0.05, 0.05, n_locations),
    ])
    locations = LocationSet(ids, coords)

    n_hours = math.ceil(n_intervals * interval_minutes / 60)
    hour_stamps = [start + timedelta(hours=h) for h in range(n_hours)]
    hour_of_day = np.array([ts.hour for ts in hour_stamps], dtype=np.float64)
    temperature = (
        50.0
        + 12.0 * np.sin(2 * np.pi * (hour_of_day - 9.0) / 24.0)
        + rng.normal(0.0, 1.5, n_hours)
    )
    weather = WeatherTable(
        timestamps=hour_stamps,
        numeric={
            "temperature": temperature,
            "humidity": rng.uniform(30.0, 90.0, n_hours),
            "visibility": rng.uniform(2.0, 10.0, n_hours),
            "wind_speed": rng.uniform(0.0, 12.0, n_hours),
        },
        states=[str(s) for s in rng.choice(["clear", "clouds", "rain"], size=n_hours, p=[0.5, 0.3, 0.2])],
    )

    step = timedelta(minutes=interval_minutes)
    stamps = [start + i * step for i in range(n_intervals)]
    days = sorted({ts.date() for ts in stamps})
    holidays = HolidayTable({d: int(rng.uniform() < effects.holiday_rate) for d in days})

    poi_rows: list[tuple[str, str, float]] = []
    for loc in ids:
        for cat in effects.poi_categories:
            count = int(rng.integers(0, 20))
            if count:
                poi_rows.append((loc, cat, float(count)))
    pois = PoiTable(poi_rows)

    aligned, _ = align_weather(weather, interval_minutes, start, n_intervals)
    temp = aligned.numeric["temperature"]
    temp_sd = float(temp.std())
    temp_z = (temp - temp.mean()) / temp_sd if temp_sd > 0 else np.zeros_like(temp)

    slots_per_day = 1440 // interval_minutes
    slot = np.array([(ts.hour * 60 + ts.minute) // interval_minutes for ts in stamps])
    bump = 0.5 * (1.0 - np.cos(2 * np.pi * slot / slots_per_day))
    is_weekend = np.array([1.0 if ts.weekday() >= 5 else 0.0 for ts in stamps])
    is_holiday = np.array([float(holidays.flags[ts.date()]) for ts in stamps])

    base = rng.uniform(effects.base_low, effects.base_high, n_locations)
    temporal = (
        effects.diurnal * bump
        + effects.weekend * is_weekend
        + effects.holiday * is_holiday
        + effects.weather * temp_z
    )
    values = base[None, :] + temporal[:, None]
    if effects.noise:
        values = values + effects.noise * rng.normal(0.0, 1.0, (n_intervals, n_locations))
    flow = FlowSeries(interval_minutes, start, np.maximum(values, 0.0))

    return SynthBundle(flow=flow, tables=RawContextTables(weather, holidays, pois), locations=locations)
