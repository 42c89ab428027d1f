"""Storm-track ingestion, preprocessing and forecast-case assembly.

Tracks come in as CSV files at 3- or 6-hour cadence, get interpolated to a
uniform 3-hour grid, encoded into fixed-layout feature vectors and finally
windowed into forecast cases: 8 history steps plus 24-hour-ahead targets.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CadenceError, ConfigError, NotFittedError, TrackFormatError

BASINS = ("NA", "EP", "WP", "NI", "SI", "SP", "SA")
NATURES = ("DS", "TS", "ET", "SS", "NR", "MX")
WIND_AVG_PERIODS = ("1min", "10min")

# Conversion factor between 10-minute and 1-minute sustained winds.
TEN_MIN_TO_ONE_MIN = 0.93

STEP = timedelta(hours=3)
HISTORY_STEPS = 8
#: history window (8 steps) plus a 24 h / 8-step gap to the target step
CASE_SPAN = 16

TRACK_CSV_HEADER = [
    "sid", "iso_time", "lat", "lon", "wmo_wind", "wmo_pres", "dist2land",
    "storm_speed", "storm_dir", "nature", "basin", "wind_avg_period",
]


@dataclass
class RawStormRecord:
    """One storm observation; wind/pressure may be missing before interpolation."""

    storm_id: str
    timestamp: datetime
    lat: float
    lon: float
    wmo_wind: float | None
    wmo_pressure: float | None
    dist_to_land: float
    storm_speed: float
    storm_dir: float
    nature: str
    basin: str
    wind_avg_period: str

    def wind_1min(self) -> float | None:
        """Wind adjusted to a 1-minute averaging period, or None if missing."""
        if self.wmo_wind is None:
            return None
        return adjust_wind_averaging(self.wmo_wind, self.wind_avg_period)


@dataclass
class StormTrack:
    storm_id: str
    records: list[RawStormRecord]

    def __len__(self) -> int:
        return len(self.records)

    def timestamps(self) -> list[datetime]:
        return [r.timestamp for r in self.records]


@dataclass
class RowRejection:
    line_no: int
    reason: str

    def __str__(self) -> str:
        return f"line {self.line_no}: {self.reason}"


class ParseResult(Sequence):
    """Sequence of StormTrack plus per-row rejection diagnostics."""

    def __init__(self, tracks: list[StormTrack], rejected: list[RowRejection]):
        self.tracks = tracks
        self.rejected = rejected

    def __len__(self) -> int:
        return len(self.tracks)

    def __getitem__(self, i):
        return self.tracks[i]

    def __iter__(self) -> Iterator[StormTrack]:
        return iter(self.tracks)


# --------------------------------------------------------------------------
# Feature layout
# --------------------------------------------------------------------------

#: (name, kind) per column; kind drives standardization (only "numeric" is
#: scaled, cyclical pairs and one-hot bits pass through untouched).
FEATURE_LAYOUT: tuple[tuple[str, str], ...] = tuple(
    [
        ("lat_cos", "cyclical"), ("lat_sin", "cyclical"),
        ("lon_cos", "cyclical"), ("lon_sin", "cyclical"),
        ("date_cos", "cyclical"), ("date_sin", "cyclical"),
        ("dir_cos", "cyclical"), ("dir_sin", "cyclical"),
        ("wind_1min", "numeric"), ("pressure", "numeric"),
        ("dist_to_land", "numeric"), ("storm_speed", "numeric"),
        ("disp_lat", "numeric"), ("disp_lon", "numeric"),
    ]
    + [(f"basin_{b}", "onehot") for b in BASINS]
    + [(f"nature_{n}", "onehot") for n in NATURES]
)

STAT_DIM = len(FEATURE_LAYOUT)  # 27

FEATURE_NAMES = tuple(name for name, _ in FEATURE_LAYOUT)
SCALED_COLUMNS = tuple(i for i, (_, kind) in enumerate(FEATURE_LAYOUT) if kind == "numeric")


def layout_hash() -> str:
    """Stable fingerprint of the feature ordering, stored in model bundles."""
    text = ",".join(f"{n}:{k}" for n, k in FEATURE_LAYOUT)
    return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

def _parse_timestamp(text: str) -> datetime:
    t = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def _parse_optional_float(text: str) -> float | None:
    text = text.strip()
    return float(text) if text else None


def parse_track_csv(path) -> ParseResult:
    """Parse a track CSV into one time-sorted StormTrack per storm id.

    Rows failing validation (out-of-range lat/lon, bad timestamps, unknown
    categories) are rejected individually and reported with their line number;
    a malformed header aborts the parse.
    """
    tracks: dict[str, list[RawStormRecord]] = {}
    rejected: list[RowRejection] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise TrackFormatError(f"{path}: empty file, expected header "
                                   f"{','.join(TRACK_CSV_HEADER)}") from None
        if [h.strip() for h in header] != TRACK_CSV_HEADER:
            raise TrackFormatError(
                f"{path}: malformed header {header!r}, expected {TRACK_CSV_HEADER!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                record = _parse_row(row)
            except (ValueError, IndexError) as exc:
                rejected.append(RowRejection(line_no, str(exc)))
                continue
            tracks.setdefault(record.storm_id, []).append(record)

    out = []
    for sid, records in tracks.items():
        records.sort(key=lambda r: r.timestamp)
        out.append(StormTrack(sid, records))
    return ParseResult(out, rejected)


def _parse_row(row: list[str]) -> RawStormRecord:
    if len(row) != len(TRACK_CSV_HEADER):
        raise ValueError(f"expected {len(TRACK_CSV_HEADER)} fields, got {len(row)}")
    lat = float(row[2])
    lon = float(row[3])
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} outside [-180, 180]")
    nature = row[9].strip()
    if nature not in NATURES:
        raise ValueError(f"unknown nature {nature!r}, admissible: {NATURES}")
    basin = row[10].strip()
    if basin not in BASINS:
        raise ValueError(f"unknown basin {basin!r}, admissible: {BASINS}")
    period = row[11].strip()
    if period not in WIND_AVG_PERIODS:
        raise ValueError(f"unknown wind_avg_period {period!r}, admissible: {WIND_AVG_PERIODS}")
    dist = float(row[6])
    if dist < 0:
        raise ValueError(f"dist2land {dist} must be >= 0")
    return RawStormRecord(
        storm_id=row[0].strip(),
        timestamp=_parse_timestamp(row[1]),
        lat=lat,
        lon=lon,
        wmo_wind=_parse_optional_float(row[4]),
        wmo_pressure=_parse_optional_float(row[5]),
        dist_to_land=dist,
        storm_speed=float(row[7]),
        storm_dir=float(row[8]) % 360.0,
        nature=nature,
        basin=basin,
        wind_avg_period=period,
    )


def write_track_csv(path, tracks: Iterable[StormTrack], comments: Sequence[str] = ()) -> None:
    """Inverse of parse_track_csv; used by the synthetic generator."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACK_CSV_HEADER)
        for track in tracks:
            for r in track.records:
                writer.writerow([
                    r.storm_id,
                    r.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                    f"{r.lat:.4f}",
                    f"{r.lon:.4f}",
                    "" if r.wmo_wind is None else f"{r.wmo_wind:.2f}",
                    "" if r.wmo_pressure is None else f"{r.wmo_pressure:.2f}",
                    f"{r.dist_to_land:.1f}",
                    f"{r.storm_speed:.2f}",
                    f"{r.storm_dir:.2f}",
                    r.nature,
                    r.basin,
                    r.wind_avg_period,
                ])


# --------------------------------------------------------------------------
# Interpolation
# --------------------------------------------------------------------------

def adjust_wind_averaging(wind: float, period: str) -> float:
    """Convert a sustained-wind report to a 1-minute averaging period.

    10-minute reports are divided by 0.93; 1-minute reports pass through.
    """
    if wind < 0:
        raise ValueError(f"wind must be >= 0, got {wind}")
    if period == "10min":
        return wind / TEN_MIN_TO_ONE_MIN
    if period == "1min":
        return wind
    raise ValueError(f"unknown averaging period {period!r}, admissible: {WIND_AVG_PERIODS}")


def _lerp(a: float, b: float) -> float:
    return 0.5 * (a + b)


def _lerp_optional(a: float | None, b: float | None) -> float | None:
    if a is None or b is None:
        return None
    return _lerp(a, b)


def _midpoint_direction(a: float, b: float) -> float:
    # shortest-arc interpolation so 350 -> 10 passes through 0, not 180
    diff = (b - a + 180.0) % 360.0 - 180.0
    return (a + 0.5 * diff) % 360.0


def _fill_missing_linear(records: list[RawStormRecord], attr: str) -> None:
    """Linearly fill interior gaps of one optional field, in place.

    Leading/trailing missing values stay missing; cases touching them are
    dropped downstream rather than extrapolated.
    """
    values = [getattr(r, attr) for r in records]
    known = [i for i, v in enumerate(values) if v is not None]
    if len(known) < 2:
        return
    for a, b in zip(known, known[1:]):
        if b - a == 1:
            continue
        va, vb = values[a], values[b]
        for j in range(a + 1, b):
            frac = (j - a) / (b - a)
            setattr(records[j], attr, va + frac * (vb - va))


def interpolate_to_3h(track: StormTrack) -> StormTrack:
    """Bring a 6-hour track to 3-hour cadence by linear midpoint interpolation.

    Positions are interpolated linearly (a documented deviation from spline
    products, acceptable at this cadence); wind and pressure midpoints are
    filled only when both neighbours are present. A track already at 3-hour
    cadence with no interior gaps is returned unchanged. Mixed cadence raises
    CadenceError naming the offending timestamps.
    """
    records = track.records
    if len(records) < 2:
        return track
    deltas = [(b.timestamp - a.timestamp) for a, b in zip(records, records[1:])]
    if all(d == STEP for d in deltas):
        if any(r.wmo_wind is None or r.wmo_pressure is None for r in records[1:-1]):
            out = [replace(r) for r in records]
            _fill_missing_linear(out, "wmo_wind")
            _fill_missing_linear(out, "wmo_pressure")
            return StormTrack(track.storm_id, out)
        return track
    if not all(d == 2 * STEP for d in deltas):
        offending = [
            b.timestamp.isoformat()
            for a, b in zip(records, records[1:])
            if b.timestamp - a.timestamp not in (STEP, 2 * STEP)
        ] or [records[0].timestamp.isoformat()]
        raise CadenceError(
            f"storm {track.storm_id}: irregular cadence at {', '.join(offending)}")

    out: list[RawStormRecord] = []
    for a, b in zip(records, records[1:]):
        out.append(replace(a))
        out.append(RawStormRecord(
            storm_id=a.storm_id,
            timestamp=a.timestamp + STEP,
            lat=_lerp(a.lat, b.lat),
            lon=_lerp(a.lon, b.lon),
            wmo_wind=_lerp_optional(a.wmo_wind, b.wmo_wind),
            wmo_pressure=_lerp_optional(a.wmo_pressure, b.wmo_pressure),
            dist_to_land=_lerp(a.dist_to_land, b.dist_to_land),
            storm_speed=_lerp(a.storm_speed, b.storm_speed),
            storm_dir=_midpoint_direction(a.storm_dir, b.storm_dir),
            nature=a.nature,
            basin=a.basin,
            wind_avg_period=a.wind_avg_period,
        ))
    out.append(replace(records[-1]))
    _fill_missing_linear(out, "wmo_wind")
    _fill_missing_linear(out, "wmo_pressure")
    return StormTrack(track.storm_id, out)


# --------------------------------------------------------------------------
# Feature encoding
# --------------------------------------------------------------------------

def _day_of_year(t: datetime) -> int:
    return t.timetuple().tm_yday


def encode_features(record: RawStormRecord, prev: RawStormRecord | None) -> np.ndarray:
    """Encode one record into the fixed 27-slot feature vector.

    Cyclical quantities (lat, lon, day-of-year, direction) become cos/sin
    pairs; day-of-year always uses 365 as divisor, so day 366 of leap years
    wraps onto day 1. Displacements are taken against `prev` (3 h earlier);
    the first record of a track has no predecessor and gets zero displacement.
    """
    if record.wmo_wind is None or record.wmo_pressure is None:
        raise ValueError(
            f"storm {record.storm_id} @ {record.timestamp.isoformat()}: "
            "wind/pressure missing, interpolate before encoding")
    if record.basin not in BASINS:
        raise ValueError(f"unknown basin {record.basin!r}, admissible: {BASINS}")
    if record.nature not in NATURES:
        raise ValueError(f"unknown nature {record.nature!r}, admissible: {NATURES}")

    lat_angle = math.pi * record.lat / 180.0
    lon_angle = math.pi * record.lon / 180.0
    date_angle = 2.0 * math.pi * _day_of_year(record.timestamp) / 365.0
    dir_angle = math.pi * record.storm_dir / 180.0

    disp_lat = 0.0 if prev is None else record.lat - prev.lat
    disp_lon = 0.0 if prev is None else record.lon - prev.lon

    vec = np.zeros(STAT_DIM)
    vec[0:8] = [
        math.cos(lat_angle), math.sin(lat_angle),
        math.cos(lon_angle), math.sin(lon_angle),
        math.cos(date_angle), math.sin(date_angle),
        math.cos(dir_angle), math.sin(dir_angle),
    ]
    vec[8] = record.wind_1min()
    vec[9] = record.wmo_pressure
    vec[10] = record.dist_to_land
    vec[11] = record.storm_speed
    vec[12] = disp_lat
    vec[13] = disp_lon
    vec[14 + BASINS.index(record.basin)] = 1.0
    vec[14 + len(BASINS) + NATURES.index(record.nature)] = 1.0
    return vec


def encode_track(track: StormTrack) -> np.ndarray:
    """Feature matrix (len(track), STAT_DIM) with per-step displacements."""
    rows = np.empty((len(track.records), STAT_DIM))
    for j, record in enumerate(track.records):
        prev = track.records[j - 1] if j > 0 else None
        rows[j] = encode_features(record, prev)
    return rows


# --------------------------------------------------------------------------
# Standardization
# --------------------------------------------------------------------------

@dataclass
class Scaler:
    """Column-wise standardizer; only numeric columns are touched.

    Constant columns get their std clamped to 1 so they pass through.
    """

    scaled_columns: tuple[int, ...] = SCALED_COLUMNS
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def fit(self, rows: np.ndarray) -> "Scaler":
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {rows.shape}")
        self.mean = np.zeros(rows.shape[1])
        self.std = np.ones(rows.shape[1])
        cols = list(self.scaled_columns)
        self.mean[cols] = rows[:, cols].mean(axis=0)
        std = rows[:, cols].std(axis=0)  # population std
        std[std == 0.0] = 1.0
        self.std[cols] = std
        return self

    def transform(self, rows: np.ndarray) -> np.ndarray:
        if self.mean is None or self.std is None:
            raise NotFittedError("scaler used before fit")
        rows = np.asarray(rows, dtype=float)
        if rows.shape[-1] != self.mean.shape[0]:
            raise ValueError(
                f"expected {self.mean.shape[0]} columns, got {rows.shape[-1]}")
        return (rows - self.mean) / self.std


def fit_scaler(rows: np.ndarray, scaled_columns: Sequence[int] = SCALED_COLUMNS) -> Scaler:
    return Scaler(tuple(scaled_columns)).fit(rows)


def apply_scaler(scaler: Scaler, rows: np.ndarray) -> np.ndarray:
    return scaler.transform(rows)


# --------------------------------------------------------------------------
# Storm selection and case assembly
# --------------------------------------------------------------------------

def select_storms(tracks: Iterable[StormTrack]) -> list[StormTrack]:
    """Keep storms that peak at >= 34 kt with more than 60 h of data afterwards."""
    kept = []
    for track in tracks:
        first_34 = None
        for r in track.records:
            wind = r.wind_1min()
            if wind is not None and wind >= 34.0:
                first_34 = r.timestamp
                break
        if first_34 is None:
            continue
        if track.records[-1].timestamp - first_34 > timedelta(hours=60):
            kept.append(track)
    return kept


@dataclass
class ForecastCase:
    """One training/evaluation sample: 8-step history plus 24 h targets."""

    storm_id: str
    t0: datetime
    lat0: float
    lon0: float
    history_stat: np.ndarray  # (8, STAT_DIM)
    target_intensity: float   # 1-min kt at t0 + 24 h
    target_dlat: float        # degrees over [t0, t0 + 24 h]
    target_dlon: float
    basin: str
    split: str | None = None  # provenance tag set by split_by_year

    @property
    def key(self) -> tuple[str, str]:
        return (self.storm_id, self.t0.strftime("%Y-%m-%dT%H:%M:%SZ"))


class CaseBuild(Sequence):
    """Cases built from one track, with skip counters."""

    def __init__(self, cases: list[ForecastCase], skipped_missing_cube: int,
                 skipped_missing_values: int):
        self.cases = cases
        self.skipped_missing_cube = skipped_missing_cube
        self.skipped_missing_values = skipped_missing_values

    def __len__(self) -> int:
        return len(self.cases)

    def __getitem__(self, i):
        return self.cases[i]

    def __iter__(self) -> Iterator[ForecastCase]:
        return iter(self.cases)


def build_cases(track: StormTrack, cube_store=None) -> CaseBuild:
    """Window a 3-hour track into forecast cases.

    A case at index i uses records i-7..i as history and record i+8 (24 h
    ahead) for targets; a track of n records yields max(0, n - 15) cases when
    every cube is available. Cases whose cube window is missing from the store
    are skipped and counted, as are cases touching missing wind/pressure.
    """
    records = track.records
    deltas = [(b.timestamp - a.timestamp) for a, b in zip(records, records[1:])]
    if any(d != STEP for d in deltas):
        raise CadenceError(f"storm {track.storm_id}: build_cases requires 3-hour cadence")

    cases: list[ForecastCase] = []
    skipped_cube = 0
    skipped_values = 0
    features: dict[int, np.ndarray] = {}
    for i in range(HISTORY_STEPS - 1, len(records) - HISTORY_STEPS):
        target = records[i + HISTORY_STEPS]
        window = records[i - HISTORY_STEPS + 1: i + 1]
        if target.wmo_wind is None or any(
                r.wmo_wind is None or r.wmo_pressure is None for r in window):
            skipped_values += 1
            continue
        t0 = records[i].timestamp
        if cube_store is not None and not cube_store.has_window(
                track.storm_id, t0, HISTORY_STEPS):
            skipped_cube += 1
            continue
        stat = np.empty((HISTORY_STEPS, STAT_DIM))
        for k, j in enumerate(range(i - HISTORY_STEPS + 1, i + 1)):
            if j not in features:
                prev = records[j - 1] if j > 0 else None
                features[j] = encode_features(records[j], prev)
            stat[k] = features[j]
        cases.append(ForecastCase(
            storm_id=track.storm_id,
            t0=t0,
            lat0=records[i].lat,
            lon0=records[i].lon,
            history_stat=stat,
            target_intensity=target.wind_1min(),
            target_dlat=target.lat - records[i].lat,
            target_dlon=target.lon - records[i].lon,
            basin=records[i].basin,
        ))
    return CaseBuild(cases, skipped_cube, skipped_values)


@dataclass
class YearSplit:
    train: list[ForecastCase]
    val: list[ForecastCase]
    test: list[ForecastCase]
    excluded: list[ForecastCase] = field(default_factory=list)


def split_by_year(cases: Iterable[ForecastCase],
                  train_years: tuple[int, int] = (1980, 2011),
                  val_years: tuple[int, int] = (2012, 2015),
                  test_years: tuple[int, int] = (2016, 2019)) -> YearSplit:
    """Partition cases by the year of t0 and tag each with its split."""
    windows = [train_years, val_years, test_years]
    for (a_lo, a_hi), (b_lo, b_hi) in zip(windows, windows[1:]):
        if a_hi >= b_lo:
            raise ConfigError(f"split year windows overlap: {windows}")
    split = YearSplit([], [], [])
    for case in cases:
        year = case.t0.year
        if train_years[0] <= year <= train_years[1]:
            case.split = "train"
            split.train.append(case)
        elif val_years[0] <= year <= val_years[1]:
            case.split = "val"
            split.val.append(case)
        elif test_years[0] <= year <= test_years[1]:
            case.split = "test"
            split.test.append(case)
        else:
            case.split = "excluded"
            split.excluded.append(case)
    return split
