"""Readers and writers for the delimited on-disk formats.

Formats (all CSV with a header row, ISO-8601 timestamps):

- trips:     location_id,timestamp
- locations: location_id,lat,lon
- weather:   timestamp,temperature,humidity,visibility,wind_speed,wind_degree,air_quality,state
             (numeric columns optional; state is a free string)
- holidays:  date,is_holiday  (0/1)
- pois:      location_id,category,count
- flow cache: timestamp,<loc_1>,...,<loc_N> with one row per interval
"""

from __future__ import annotations

import csv
from datetime import date, datetime
from pathlib import Path

import numpy as np

from .datasets import (
    FlowSeries,
    HolidayTable,
    IngestError,
    LocationSet,
    PoiTable,
    WeatherTable,
)

WEATHER_NUMERIC_COLUMNS = (
    "temperature", "humidity", "visibility", "wind_speed", "wind_degree", "air_quality",
)


def _read_rows(path: Path, expected_first: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != expected_first:
            raise IngestError(f"{path}: expected header starting with {expected_first!r}, got {header}")
        return header, [row for row in reader if row]


def read_trips(path: str | Path):
    """Yield raw (location_id, timestamp string) pairs; parsing happens downstream."""
    _, rows = _read_rows(Path(path), "location_id")
    return [(row[0].strip(), row[1].strip()) for row in rows]


def write_trips(path: str | Path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["location_id", "timestamp"])
        for loc, ts in records:
            writer.writerow([loc, ts.isoformat() if isinstance(ts, datetime) else ts])


def read_locations(path: str | Path) -> LocationSet:
    _, rows = _read_rows(Path(path), "location_id")
    ids = []
    coords = []
    for i, row in enumerate(rows, start=2):
        if len(row) < 3:
            raise IngestError(f"{path} line {i}: expected location_id,lat,lon")
        ids.append(row[0].strip())
        try:
            coords.append((float(row[1]), float(row[2])))
        except ValueError:
            raise IngestError(f"{path} line {i}: bad coordinate in {row!r}") from None
    return LocationSet(tuple(ids), np.array(coords))


def write_locations(path: str | Path, locations: LocationSet) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["location_id", "lat", "lon"])
        for loc, (lat, lon) in zip(locations.ids, locations.coords):
            writer.writerow([loc, repr(float(lat)), repr(float(lon))])


def read_weather(path: str | Path) -> WeatherTable:
    header, rows = _read_rows(Path(path), "timestamp")
    numeric_names = [h for h in header[1:] if h != "state"]
    has_state = "state" in header
    state_pos = header.index("state") if has_state else -1
    positions = {name: header.index(name) for name in numeric_names}
    timestamps = []
    numeric = {name: [] for name in numeric_names}
    states = []
    for i, row in enumerate(rows, start=2):
        try:
            timestamps.append(datetime.fromisoformat(row[0].strip()))
        except ValueError:
            raise IngestError(f"{path} line {i}: unparseable timestamp {row[0]!r}") from None
        for name, pos in positions.items():
            try:
                numeric[name].append(float(row[pos]))
            except (ValueError, IndexError):
                raise IngestError(f"{path} line {i}: bad value for {name!r}") from None
        states.append(row[state_pos].strip() if has_state else "")
    return WeatherTable(
        timestamps=timestamps,
        numeric={name: np.array(col) for name, col in numeric.items()},
        states=states,
    )


def write_weather(path: str | Path, table: WeatherTable) -> None:
    names = list(table.numeric)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *names, "state"])
        for i, ts in enumerate(table.timestamps):
            writer.writerow([ts.isoformat()] + [repr(float(table.numeric[n][i])) for n in names]
                            + [table.states[i]])


def read_holidays(path: str | Path) -> HolidayTable:
    _, rows = _read_rows(Path(path), "date")
    flags = {}
    for i, row in enumerate(rows, start=2):
        try:
            day = date.fromisoformat(row[0].strip())
            flags[day] = int(row[1])
        except (ValueError, IndexError):
            raise IngestError(f"{path} line {i}: expected date,is_holiday row, got {row!r}") from None
    return HolidayTable(flags)


def write_holidays(path: str | Path, table: HolidayTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "is_holiday"])
        for day in sorted(table.flags):
            writer.writerow([day.isoformat(), table.flags[day]])


def read_pois(path: str | Path) -> PoiTable:
    _, rows = _read_rows(Path(path), "location_id")
    parsed = []
    for i, row in enumerate(rows, start=2):
        try:
            parsed.append((row[0].strip(), row[1].strip(), float(row[2])))
        except (ValueError, IndexError):
            raise IngestError(f"{path} line {i}: expected location_id,category,count row") from None
    return PoiTable(parsed)


def write_pois(path: str | Path, table: PoiTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["location_id", "category", "count"])
        for loc, cat, count in table.rows:
            writer.writerow([loc, cat, repr(float(count))])


def write_flow_cache(path: str | Path, series: FlowSeries, ids) -> None:
    """Flow matrix cache: location-id header, one row per interval."""
    ids = list(ids)
    if len(ids) != series.n_locations:
        raise IngestError(f"{len(ids)} ids for {series.n_locations} flow columns")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *ids])
        for ts, row in zip(series.timestamps(), series.values):
            writer.writerow([ts.isoformat()] + [repr(float(v)) for v in row])


def read_flow_cache(path: str | Path, interval_minutes: int) -> tuple[FlowSeries, tuple[str, ...]]:
    header, rows = _read_rows(Path(path), "timestamp")
    ids = tuple(h.strip() for h in header[1:])
    if not rows:
        raise IngestError(f"{path}: no flow rows")
    timestamps = []
    values = []
    for i, row in enumerate(rows, start=2):
        try:
            timestamps.append(datetime.fromisoformat(row[0].strip()))
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise IngestError(f"{path} line {i}: bad flow row") from None
        if len(values[-1]) != len(ids):
            raise IngestError(f"{path} line {i}: {len(values[-1])} values for {len(ids)} locations")
    series = FlowSeries(interval_minutes, timestamps[0], np.array(values))
    expect = series.timestamps()
    if timestamps != expect:
        bad = next(i for i, (a, b) in enumerate(zip(timestamps, expect)) if a != b)
        raise IngestError(
            f"{path}: timestamps not on a {interval_minutes}-minute grid (first offender row {bad + 2})"
        )
    return series, ids
