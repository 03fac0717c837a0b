"""Trip segmentation, driving-event detection and per-trip metric extraction.

All quantities are interval based: a trip of ``n`` records spans ``n - 1``
intervals, its duration is ``t_last - t_first`` and its distance is the
odometer change ``m_last - m_first``. Events and idle time are attributed to
the interval ending at each record, so concatenating two copies of a
periodic trip doubles every count and leaves every rate unchanged.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, DataError, DomainError
from .specs import check_specs

RAW_COLUMNS = ("vehicle_id", "timestamp", "speed", "rpm", "bearing", "brake", "mileage", "fuel")
_FIELDS = ("timestamp", "speed", "rpm", "bearing", "brake", "mileage", "fuel")


class DrivingRecord(NamedTuple):
    timestamp: float
    speed: float
    rpm: float
    bearing: float
    brake: float = 0.0
    mileage: float = 0.0
    fuel: float = 0.0


@dataclass(frozen=True)
class EventThresholds:
    harsh_rate: float = 3.0  # km/h/s
    outlier_rate: float = 20.0  # km/h/s
    turn_speed: float = 40.0  # km/h
    turn_rate: float = 50.0  # deg/s
    idle_rpm: float = 700.0
    engine_off_gap: float = 30 * 60.0  # s
    max_gap: float = 60.0  # s
    min_distance: float = 3.0  # km
    fuel_quantile: float = 0.99


@dataclass(frozen=True)
class EventCounts:
    harsh_accel: int
    harsh_decel: int
    sharp_turn: int
    idle_seconds: int
    outliers: int


@dataclass(frozen=True, eq=False)
class Stream:
    """Column arrays of a time-ordered record stream."""

    timestamp: np.ndarray
    speed: np.ndarray
    rpm: np.ndarray
    bearing: np.ndarray
    brake: np.ndarray
    mileage: np.ndarray
    fuel: np.ndarray = field(default=None)

    def __post_init__(self):
        n = np.asarray(self.timestamp).size
        for name in _FIELDS:
            val = getattr(self, name)
            arr = np.full(n, np.nan) if val is None else np.asarray(val, dtype=float).reshape(-1)
            if arr.size != n:
                raise DataError(f"column {name!r} has {arr.size} values, expected {n}")
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.timestamp.size

    def slice(self, start, stop):
        return type(self)(*(getattr(self, f)[start:stop] for f in _FIELDS))

    def take(self, mask):
        return type(self)(*(getattr(self, f)[mask] for f in _FIELDS))

    @classmethod
    def from_records(cls, records):
        rows = [DrivingRecord(*r) for r in records]
        if not rows:
            return cls(*(np.empty(0) for _ in _FIELDS))
        cols = np.array(rows, dtype=float).T
        return cls(*cols)

    @classmethod
    def from_frame(cls, frame):
        return cls(*(frame[f].to_numpy(dtype=float) for f in _FIELDS))

    def check_monotone(self):
        if np.any(np.diff(self.timestamp) <= 0):
            raise DataError("timestamps must be strictly increasing")


class Trip(Stream):
    @property
    def distance(self):
        return float(self.mileage[-1] - self.mileage[0]) if len(self) else 0.0

    @property
    def duration(self):
        return float(self.timestamp[-1] - self.timestamp[0]) if len(self) else 0.0


def angle_difference(a, b):
    """Signed smallest rotation from ``a`` to ``b`` in degrees, in (-180, 180]."""
    d = (np.asarray(b, dtype=float) - np.asarray(a, dtype=float)) % 360.0
    return np.where(d > 180.0, d - 360.0, d)


def _runs(mask):
    """Number of maximal runs of True in a boolean array."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0
    return int(mask[0]) + int(np.count_nonzero(mask[1:] & ~mask[:-1]))


def filter_fuel_outliers(stream, quantile=0.99):
    """Blank fuel readings above the stream's ``quantile`` (per vehicle, before segmentation)."""
    fuel = stream.fuel.copy()
    valid = np.isfinite(fuel)
    if valid.any():
        cut = np.quantile(fuel[valid], quantile)
        fuel[valid & (fuel > cut)] = np.nan
    return type(stream)(stream.timestamp, stream.speed, stream.rpm, stream.bearing, stream.brake, stream.mileage, fuel)


def _trim_engine_off(trip):
    on = np.flatnonzero(trip.rpm > 0)
    if on.size == 0:
        return None
    return trip.slice(on[0], on[-1] + 1)


def segment_trips(stream, thresholds=EventThresholds()):
    """Split a vehicle's stream into trips.

    A trip ends at a data gap longer than ``max_gap`` or at an engine-off
    spell (rpm = 0) lasting longer than ``engine_off_gap``; the off spell is
    dropped. Engine-off records at either end of a trip are trimmed and
    trips shorter than ``min_distance`` km are discarded.
    """
    if not isinstance(stream, Stream):
        stream = Stream.from_records(stream)
    if len(stream) == 0:
        return []
    stream.check_monotone()
    t = stream.timestamp
    n = len(stream)
    keep = np.ones(n, dtype=bool)
    cut_after = np.diff(t) > thresholds.max_gap  # split between i and i+1

    off = stream.rpm == 0
    i = 0
    while i < n:
        if not off[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and off[j + 1] and not cut_after[j]:
            j += 1
        end = t[j + 1] if j + 1 < n and not cut_after[j] else t[j]
        if end - t[i] > thresholds.engine_off_gap:
            keep[i : j + 1] = False
            if i > 0:
                cut_after[i - 1] = True
            if j + 1 < n:
                cut_after[j] = True
        i = j + 1

    bounds = np.concatenate(([0], np.flatnonzero(cut_after) + 1, [n]))
    trips = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        idx = np.arange(a, b)[keep[a:b]]
        if idx.size < 2:
            continue
        trip = _trim_engine_off(Trip(*(getattr(stream, f)[idx] for f in _FIELDS)))
        if trip is not None and len(trip) >= 2 and trip.distance >= thresholds.min_distance:
            trips.append(trip)
    return trips


def detect_events(trip, thresholds=EventThresholds()):
    """Count harsh accelerations, decelerations, sharp turns and idle seconds.

    Consecutive intervals over a threshold form one event. Intervals whose
    speed change rate exceeds ``outlier_rate`` are discarded and end any
    event in progress.
    """
    if len(trip) and np.any(np.diff(trip.timestamp) <= 0):
        raise DataError("timestamps must be strictly increasing")
    dt = np.diff(trip.timestamp)
    rate = np.diff(trip.speed) / dt if dt.size else np.empty(0)
    outlier = np.abs(rate) > thresholds.outlier_rate
    accel = (rate >= thresholds.harsh_rate) & ~outlier
    decel = (rate <= -thresholds.harsh_rate) & ~outlier
    turn_rate = angle_difference(trip.bearing[:-1], trip.bearing[1:]) / dt if dt.size else np.empty(0)
    turn = (trip.speed[1:] > thresholds.turn_speed) & (np.abs(turn_rate) > thresholds.turn_rate)
    rpm = trip.rpm[1:]
    idle = (rpm > 0) & (rpm < thresholds.idle_rpm)
    return EventCounts(
        harsh_accel=_runs(accel),
        harsh_decel=_runs(decel),
        sharp_turn=_runs(turn),
        idle_seconds=int(np.count_nonzero(idle)),
        outliers=int(np.count_nonzero(outlier)),
    )


def per_km(counts, distance):
    """Normalise raw event counts by trip distance in km."""
    if not distance > 0:
        raise DomainError("distance must be positive")
    return np.asarray(counts, dtype=float) / distance


def _avg_rpm(trip, thresholds):
    rpm = trip.rpm[1:]
    active = rpm[rpm >= thresholds.idle_rpm]
    return float(active.mean()) if active.size else 0.0


METRIC_EXTRACTORS = {
    "HarshAccel": lambda trip, ev, th: ev.harsh_accel / trip.distance,
    "HarshDecel": lambda trip, ev, th: ev.harsh_decel / trip.distance,
    "SharpTurn": lambda trip, ev, th: ev.sharp_turn / trip.distance,
    "IdleRatio": lambda trip, ev, th: ev.idle_seconds / trip.duration,
    "AvgSpeed": lambda trip, ev, th: trip.distance / (trip.duration / 3600.0),
    "AvgRPM": lambda trip, ev, th: _avg_rpm(trip, th),
}


def extract_metrics(trip, specs, thresholds=EventThresholds()):
    specs = check_specs(specs)
    unknown = [s.name for s in specs if s.name not in METRIC_EXTRACTORS]
    if unknown:
        raise ConfigurationError(f"no extractor for metrics {unknown}; known: {sorted(METRIC_EXTRACTORS)}")
    if not trip.distance > 0 or not trip.duration > 0:
        raise DomainError("trip must have positive distance and duration")
    events = detect_events(trip, thresholds)
    return np.array([METRIC_EXTRACTORS[s.name](trip, events, thresholds) for s in specs])


def read_driving_csv(path):
    """Load raw records, dropping rows with missing values."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing = [c for c in RAW_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"raw CSV lacks columns {missing}")
    if not pd.api.types.is_numeric_dtype(frame["timestamp"]):
        ts = pd.to_datetime(frame["timestamp"], errors="coerce", utc=True)
        frame["timestamp"] = (ts - pd.Timestamp(0, tz="UTC")).dt.total_seconds()
    # fuel is auxiliary; a missing fuel reading does not void the record
    frame = frame.dropna(subset=[c for c in RAW_COLUMNS if c != "fuel"])
    frame["vehicle_id"] = frame["vehicle_id"].astype(str)
    return frame[list(RAW_COLUMNS)]


def extract_fleet_metrics(frame, specs, thresholds=EventThresholds()):
    """Run segmentation and extraction for every vehicle of a raw frame."""
    specs = check_specs(specs)
    rows = []
    for vid, group in frame.groupby("vehicle_id", sort=True):
        stream = Stream.from_frame(group.sort_values("timestamp", kind="stable"))
        stream = filter_fuel_outliers(stream, thresholds.fuel_quantile)
        for k, trip in enumerate(segment_trips(stream, thresholds)):
            rows.append([vid, k, *extract_metrics(trip, specs, thresholds)])
    return pd.DataFrame(rows, columns=["vehicle_id", "trip_id", *(s.name for s in specs)])


def write_metrics_csv(frame, path):
    frame.to_csv(path, index=False, float_format="%.17g")


def read_metrics_csv(path, specs=None):
    try:
        frame = pd.read_csv(path, dtype={"vehicle_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if list(frame.columns[:2]) != ["vehicle_id", "trip_id"]:
        raise DataError("metrics CSV must start with vehicle_id, trip_id")
    if specs is not None:
        names = [s.name for s in specs]
        if list(frame.columns[2:]) != names:
            raise DataError(f"metric columns {list(frame.columns[2:])} do not match specs {names}")
    if frame.iloc[:, 2:].isna().any().any():
        raise DataError("metrics CSV contains missing values")
    return frame


def client_matrices(frame):
    """Group a metrics frame into ``{vehicle_id: (n_trips, d) array}``."""
    metric_cols = list(frame.columns[2:])
    return {str(vid): g[metric_cols].to_numpy(dtype=float) for vid, g in frame.groupby("vehicle_id", sort=True)}
