"""Context feature encoding.

Four feature families are supported: weather, holiday and temporal position
vary over time (one row per interval), POIs vary over space (one row per
location). Encoders produce numeric matrices with a per-column manifest of
(family, column name) pairs, and ``replicate_and_merge`` aligns both kinds
onto a window x location x feature tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import (
    FlowSeries,
    HolidayTable,
    IngestError,
    LocationSet,
    PoiTable,
    RawContextTables,
    WeatherTable,
    align_weather,
)

FAMILY_ORDER = ("weather", "holiday", "temporal_position", "pois")
TEMPORAL_FAMILIES = ("weather", "holiday", "temporal_position")
SELECTOR_TOKENS = {"Wea": "weather", "Holi": "holiday", "TP": "temporal_position", "POIs": "pois"}

BAD_WEATHER_WORDS = (
    "rain", "storm", "snow", "thunder", "drizzle", "fog", "mist", "dust", "hail",
    "sleet", "squall", "tornado", "smoke",
)


class EncodingError(ValueError):
    """Inputs violate an encoder's contract."""


@dataclass
class TemporalContext:
    """T x Et matrix with a (family, name) manifest per column."""

    values: np.ndarray
    columns: list[tuple[str, str]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise EncodingError(
                f"temporal context shape {self.values.shape} does not match {len(self.columns)} columns"
            )

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class SpatialContext:
    """N x Es matrix with a (family, name) manifest per column."""

    values: np.ndarray
    columns: list[tuple[str, str]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise EncodingError(
                f"spatial context shape {self.values.shape} does not match {len(self.columns)} columns"
            )

    @property
    def width(self) -> int:
        return self.values.shape[1]


def parse_feature_selector(selector: str) -> tuple[str, ...]:
    """Map a selector like ``Holi-TP`` to family names in canonical order.

    ``All`` selects every family, ``None`` selects nothing; otherwise the
    selector joins any subset of Wea/Holi/TP/POIs with ``-``.
    """
    selector = selector.strip()
    if selector == "All":
        return FAMILY_ORDER
    if selector == "None" or not selector:
        return ()
    families = set()
    for token in selector.split("-"):
        family = SELECTOR_TOKENS.get(token.strip())
        if family is None:
            raise EncodingError(
                f"unknown feature token {token.strip()!r} in {selector!r}; expected Wea, Holi, TP, POIs"
            )
        families.add(family)
    return tuple(f for f in FAMILY_ORDER if f in families)


def selector_label(families) -> str:
    families = set(families)
    if not families:
        return "None"
    if families == set(FAMILY_ORDER):
        return "All"
    reverse = {v: k for k, v in SELECTOR_TOKENS.items()}
    return "-".join(reverse[f] for f in FAMILY_ORDER if f in families)


# -- temporal families ---------------------------------------------------------


def encode_temporal_position(timestamps, interval_minutes: int) -> TemporalContext:
    """Slot-of-day and day-of-week one-hots (width 1440/interval + 7)."""
    slots = 1440 // interval_minutes
    values = np.zeros((len(timestamps), slots + 7))
    for i, ts in enumerate(timestamps):
        minute = ts.hour * 60 + ts.minute
        if minute % interval_minutes or ts.second or ts.microsecond:
            raise EncodingError(f"timestamp {ts.isoformat()} not aligned to {interval_minutes}-minute grid")
        values[i, minute // interval_minutes] = 1.0
        values[i, slots + ts.weekday()] = 1.0
    columns = [("temporal_position", f"slot={s}") for s in range(slots)]
    columns += [("temporal_position", f"dow={d}") for d in range(7)]
    return TemporalContext(values, columns)


@dataclass
class WeatherEncoder:
    """Weather matrix encoder fitted on the train split only.

    Numeric columns are z-scored with train statistics (zero-variance
    columns map to 0); the categorical state becomes a one-hot over the
    train vocabulary plus an "unknown" bucket, or a good/bad pair under
    ``state_encoding="binary"``.
    """

    numeric_names: list[str]
    means: np.ndarray
    stds: np.ndarray
    state_vocab: list[str]
    state_encoding: str = "onehot"

    @classmethod
    def fit(cls, aligned: WeatherTable, train_range: tuple[int, int],
            state_encoding: str = "onehot") -> "WeatherEncoder":
        if state_encoding not in ("onehot", "binary"):
            raise EncodingError(f"state_encoding must be onehot or binary, got {state_encoding!r}")
        lo, hi = train_range
        if not (0 <= lo < hi <= len(aligned)):
            raise EncodingError(f"train range {train_range} out of bounds for {len(aligned)} rows")
        names = list(aligned.numeric)
        means = np.array([aligned.numeric[n][lo:hi].mean() for n in names]) if names else np.zeros(0)
        stds = np.array([aligned.numeric[n][lo:hi].std() for n in names]) if names else np.zeros(0)
        vocab = sorted(set(aligned.states[lo:hi])) if state_encoding == "onehot" else []
        return cls(names, means, stds, vocab, state_encoding)

    def transform(self, aligned: WeatherTable) -> TemporalContext:
        t = len(aligned)
        blocks = []
        columns: list[tuple[str, str]] = []
        for i, name in enumerate(self.numeric_names):
            col = aligned.numeric[name]
            if self.stds[i] > 0:
                blocks.append((col - self.means[i]) / self.stds[i])
            else:
                blocks.append(np.zeros(t))
            columns.append(("weather", name))
        if self.state_encoding == "onehot":
            onehot = np.zeros((t, len(self.state_vocab) + 1))
            index = {s: j for j, s in enumerate(self.state_vocab)}
            for row, state in enumerate(aligned.states):
                onehot[row, index.get(state, len(self.state_vocab))] = 1.0
            columns += [("weather", f"state={s}") for s in self.state_vocab]
            columns.append(("weather", "state=<unknown>"))
            values = np.column_stack(blocks + [onehot]) if blocks else onehot
        else:
            bad = np.array([1.0 if _is_bad_weather(s) else 0.0 for s in aligned.states])
            pair = np.column_stack([1.0 - bad, bad])
            columns += [("weather", "state=good"), ("weather", "state=bad")]
            values = np.column_stack(blocks + [pair]) if blocks else pair
        return TemporalContext(values, columns)


def _is_bad_weather(state: str) -> bool:
    lowered = state.lower()
    return any(word in lowered for word in BAD_WEATHER_WORDS)


def encode_holiday(timestamps, holidays: HolidayTable) -> TemporalContext:
    """0/1 holiday flag, repeated for every interval of the day."""
    missing = sorted({ts.date() for ts in timestamps if ts.date() not in holidays.flags})
    if missing:
        raise EncodingError(f"holiday table missing dates: {[d.isoformat() for d in missing]}")
    values = np.array([[float(holidays.flags[ts.date()])] for ts in timestamps])
    return TemporalContext(values, [("holiday", "is_holiday")])


# -- spatial family ------------------------------------------------------------


def _poi_counts(pois: PoiTable, locations: LocationSet) -> tuple[np.ndarray, list[str]]:
    categories = pois.categories()
    index = locations.index()
    cat_index = {c: j for j, c in enumerate(categories)}
    counts = np.zeros((len(locations), len(categories)))
    unknown: dict[str, None] = {}
    for loc, cat, count in pois.rows:
        if loc not in index:
            unknown.setdefault(loc)
            continue
        counts[index[loc], cat_index[cat]] += count
    if unknown:
        raise EncodingError(f"POI rows reference unknown locations: {sorted(unknown)}")
    return counts, categories


def encode_pois_density(pois: PoiTable, locations: LocationSet) -> SpatialContext:
    """Per-category POI counts, one row per location."""
    counts, categories = _poi_counts(pois, locations)
    return SpatialContext(counts, [("pois", c) for c in categories])


def encode_pois_tfidf(pois: PoiTable, locations: LocationSet) -> SpatialContext:
    """TF-IDF over POI categories: categories as terms, locations as documents.

    tf(n,c) = count(n,c) / total(n); idf(c) = ln(N / #locations carrying c);
    locations without POIs give zero rows, ubiquitous categories zero columns.
    """
    counts, categories = _poi_counts(pois, locations)
    totals = counts.sum(axis=1, keepdims=True)
    tf = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    present = (counts > 0).sum(axis=0)
    idf = np.where(present > 0, np.log(len(locations) / np.maximum(present, 1)), 0.0)
    return SpatialContext(tf * idf, [("pois", c) for c in categories])


# -- assembly -------------------------------------------------------------------


@dataclass(frozen=True)
class ContextManifest:
    """Widths of each encoded family, temporal first, in canonical order."""

    temporal: tuple[tuple[str, int], ...]
    spatial: tuple[tuple[str, int], ...]

    @property
    def et(self) -> int:
        return sum(w for _, w in self.temporal)

    @property
    def es(self) -> int:
        return sum(w for _, w in self.spatial)

    @property
    def families(self) -> tuple[str, ...]:
        return tuple(f for f, w in self.temporal + self.spatial if w)

    def family_slices(self) -> list[tuple[str, slice]]:
        """Per-family column ranges over the merged (Et+Es) feature axis."""
        out = []
        offset = 0
        for family, width in self.temporal + self.spatial:
            if width:
                out.append((family, slice(offset, offset + width)))
            offset += width
        return out

    @classmethod
    def from_contexts(cls, temporal: TemporalContext, spatial: SpatialContext) -> "ContextManifest":
        def widths(columns):
            acc: dict[str, int] = {}
            for family, _ in columns:
                acc[family] = acc.get(family, 0) + 1
            return tuple(acc.items())

        return cls(widths(temporal.columns), widths(spatial.columns))


def build_contexts(series: FlowSeries, tables: RawContextTables, locations: LocationSet,
                   families, train_range: tuple[int, int], pois_encoding: str = "density",
                   state_encoding: str = "onehot") -> tuple[TemporalContext, SpatialContext]:
    """Encode the selected families against a flow series' time grid.

    Weather normalization and vocabulary are fitted on ``train_range`` rows
    and reused verbatim elsewhere. Families come back concatenated in
    canonical order (weather, holiday, temporal position | POIs).
    """
    stamps = series.timestamps()
    families = tuple(families)
    for f in families:
        if f not in FAMILY_ORDER:
            raise EncodingError(f"unknown feature family {f!r}")
    parts: list[TemporalContext] = []
    if "weather" in families:
        aligned, _ = align_weather(tables.weather, series.interval_minutes, series.start_time,
                                   series.n_intervals)
        encoder = WeatherEncoder.fit(aligned, train_range, state_encoding)
        parts.append(encoder.transform(aligned))
    if "holiday" in families:
        parts.append(encode_holiday(stamps, tables.holidays))
    if "temporal_position" in families:
        parts.append(encode_temporal_position(stamps, series.interval_minutes))
    if parts:
        temporal = TemporalContext(
            np.column_stack([p.values for p in parts]),
            [c for p in parts for c in p.columns],
        )
    else:
        temporal = TemporalContext(np.zeros((series.n_intervals, 0)), [])
    if "pois" in families:
        if pois_encoding not in ("density", "tfidf"):
            raise EncodingError(f"pois_encoding must be density or tfidf, got {pois_encoding!r}")
        encode = encode_pois_tfidf if pois_encoding == "tfidf" else encode_pois_density
        spatial = encode(tables.pois, locations)
    else:
        spatial = SpatialContext(np.zeros((len(locations), 0)), [])
    return temporal, spatial


def replicate_and_merge(temporal_window: np.ndarray, spatial: np.ndarray) -> np.ndarray:
    """Duplicate temporal context across locations and spatial context across
    steps, then concatenate on the feature axis.

    ``temporal_window`` is (..., P, Et), ``spatial`` is (N, Es); the result is
    (..., P, N, Et+Es) with the temporal slice constant over locations and the
    spatial slice constant over steps.
    """
    temporal_window = np.asarray(temporal_window, dtype=np.float64)
    spatial = np.asarray(spatial, dtype=np.float64)
    if spatial.ndim != 2:
        raise EncodingError(f"spatial context must be 2-D, got shape {spatial.shape}")
    n = spatial.shape[0]
    lead = temporal_window.shape[:-1]
    t_rep = np.broadcast_to(temporal_window[..., None, :], (*lead, n, temporal_window.shape[-1]))
    s_rep = np.broadcast_to(spatial, (*lead, n, spatial.shape[-1]))
    return np.concatenate([t_rep, s_rep], axis=-1)
