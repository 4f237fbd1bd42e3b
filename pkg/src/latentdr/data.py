"""Smart-meter ingestion: parsing, user exclusion, alignment, scaling and
the augmented Dickey-Fuller stationarity check.

Timestamps are handled as ``numpy.datetime64`` values at hour resolution in
UTC. File layouts::

    meter CSV        user_id,timestamp,consumption_kwh
    temperature CSV  station_id,timestamp,temp_c
    metadata CSV     user_id,has_pv,has_automation,signup_date
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

HOUR = np.timedelta64(1, "h")
METER_HEADER = ["user_id", "timestamp", "consumption_kwh"]
TEMP_HEADER = ["station_id", "timestamp", "temp_c"]
META_HEADER = ["user_id", "has_pv", "has_automation", "signup_date"]
DEFAULT_MAX_KWH = 50.0
MAX_INTERP_GAP = 3


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class DuplicateKeyError(ParseError):
    pass


class OrderError(ParseError):
    pass


class DegenerateScaleError(DataError):
    pass


class EmptyOverlapError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


def parse_hour(text: str) -> np.datetime64:
    """ISO-8601 instant on a whole hour -> naive UTC ``datetime64[h]``."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(timezone.utc).replace(tzinfo=None)
    if stamp.minute or stamp.second or stamp.microsecond:
        raise ValueError(f"timestamp {text!r} is not on a whole hour")
    return np.datetime64(stamp, "h")


def format_hour(ts) -> str:
    return str(np.datetime64(ts, "h")) + ":00:00Z"


def hour_of_day(ts) -> np.ndarray:
    return np.asarray(ts, dtype="datetime64[h]").astype(np.int64) % 24


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "y", "t"):
        return True
    if value in ("0", "false", "no", "n", "f", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _rows(path, header):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if [c.strip() for c in first] != header:
            raise ParseError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


@dataclass(frozen=True)
class UserMeta:
    user_id: str
    has_pv: bool = False
    has_automation: bool = False
    signup: np.datetime64 = None


@dataclass(frozen=True, eq=False)
class RawReadingTable:
    """Per-user hourly kWh readings, each user sorted by time."""

    readings: dict
    meta: dict = field(default_factory=dict)

    @property
    def users(self) -> list:
        return sorted(self.readings)

    def meta_for(self, user_id) -> UserMeta:
        return self.meta.get(user_id, UserMeta(user_id))

    def n_rows(self) -> int:
        return sum(len(ts) for ts, _ in self.readings.values())


@dataclass(frozen=True, eq=False)
class TemperatureTable:
    stations: dict

    def series(self, station_id=None):
        if station_id is None:
            if len(self.stations) != 1:
                raise DataError(f"{len(self.stations)} stations present; choose one explicitly")
            station_id = next(iter(self.stations))
        return self.stations[station_id]


@dataclass(frozen=True)
class ScalingRecord:
    min: float
    max: float
    temp_mean: float
    temp_std: float

    def invert(self, consumption) -> np.ndarray:
        return np.asarray(consumption, dtype=float) * (self.max - self.min) + self.min

    def invert_temperature(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.temp_std + self.temp_mean


@dataclass(frozen=True, eq=False)
class ConsumptionSeries:
    """Gap-free hourly series of normalized consumption and standardized
    temperature for one user."""

    user_id: str
    timestamps: np.ndarray
    consumption: np.ndarray
    temperature: np.ndarray
    scaling: ScalingRecord = None
    segment: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[h]")
        y = np.asarray(self.consumption, dtype=float)
        temp = np.asarray(self.temperature, dtype=float)
        if not (ts.shape == y.shape == temp.shape) or ts.ndim != 1:
            raise DataError("timestamps, consumption and temperature must be equal-length vectors")
        if ts.size > 1 and np.any(np.diff(ts) != HOUR):
            raise DataError(f"series {self.user_id} has gaps or unordered timestamps")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(temp))):
            raise DataError(f"series {self.user_id} contains non-finite values")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "consumption", y)
        object.__setattr__(self, "temperature", temp)

    def __len__(self):
        return self.timestamps.size

    @property
    def key(self) -> str:
        return self.user_id if self.segment == 0 else f"{self.user_id}.{self.segment}"

    @property
    def hours(self) -> np.ndarray:
        return hour_of_day(self.timestamps)

    def index_of(self, ts) -> int:
        pos = (np.datetime64(ts, "h") - self.timestamps[0]) // HOUR if len(self) else -1
        if not 0 <= pos < len(self):
            raise KeyError(f"{ts} not in series {self.key}")
        return int(pos)

    def slice(self, start: int, stop: int) -> "ConsumptionSeries":
        return ConsumptionSeries(
            self.user_id,
            self.timestamps[start:stop],
            self.consumption[start:stop],
            self.temperature[start:stop],
            self.scaling,
            self.segment,
        )

    def split_at(self, ts):
        """(before, from) halves around timestamp ``ts``."""
        cut = int(np.searchsorted(self.timestamps, np.datetime64(ts, "h")))
        return self.slice(0, cut), self.slice(cut, len(self))

    def with_consumption(self, consumption) -> "ConsumptionSeries":
        return ConsumptionSeries(
            self.user_id, self.timestamps, consumption, self.temperature, self.scaling, self.segment
        )

    def concat(self, other: "ConsumptionSeries") -> "ConsumptionSeries":
        return ConsumptionSeries(
            self.user_id,
            np.concatenate([self.timestamps, other.timestamps]),
            np.concatenate([self.consumption, other.consumption]),
            np.concatenate([self.temperature, other.temperature]),
            self.scaling,
            self.segment,
        )


def load_readings(meter_path, temp_path, meta_path=None):
    """Parse meter and temperature CSVs (and optionally user metadata).

    Meter rows may come in any order and are sorted per user; a repeated
    (user, timestamp) pair is an error. Temperature rows must be strictly
    increasing within a station.
    """
    per_user = {}
    for line, (uid, stamp, kwh) in _rows(meter_path, METER_HEADER):
        try:
            ts = parse_hour(stamp)
            value = float(kwh)
        except ValueError as exc:
            raise ParseError(meter_path, line, str(exc)) from None
        if not np.isfinite(value) or value < 0:
            raise ParseError(meter_path, line, f"consumption must be a finite kWh >= 0, got {kwh}")
        rows = per_user.setdefault(uid, {})
        if ts in rows:
            raise DuplicateKeyError(meter_path, line, f"duplicate reading for user {uid} at {stamp}")
        rows[ts] = value
    readings = {}
    for uid, rows in per_user.items():
        ts = np.array(sorted(rows), dtype="datetime64[h]")
        readings[uid] = (ts, np.array([rows[t] for t in ts]))

    stations = {}
    for line, (sid, stamp, temp) in _rows(temp_path, TEMP_HEADER):
        try:
            ts = parse_hour(stamp)
            value = float(temp)
        except ValueError as exc:
            raise ParseError(temp_path, line, str(exc)) from None
        if not np.isfinite(value):
            raise ParseError(temp_path, line, "temperature must be finite")
        ts_list, val_list = stations.setdefault(sid, ([], []))
        if ts_list and ts <= ts_list[-1]:
            raise OrderError(temp_path, line, f"timestamps of station {sid} not strictly increasing")
        ts_list.append(ts)
        val_list.append(value)
    temps = TemperatureTable(
        {sid: (np.array(t, dtype="datetime64[h]"), np.array(v)) for sid, (t, v) in stations.items()}
    )
    meta = load_metadata(meta_path) if meta_path is not None else {}
    return RawReadingTable(readings, meta), temps


def load_metadata(path) -> dict:
    meta = {}
    for line, (uid, pv, auto, signup) in _rows(path, META_HEADER):
        if uid in meta:
            raise DuplicateKeyError(path, line, f"duplicate metadata for user {uid}")
        try:
            when = parse_hour(signup) if signup else None
            meta[uid] = UserMeta(uid, _parse_bool(pv), _parse_bool(auto), when)
        except ValueError as exc:
            raise ParseError(path, line, str(exc)) from None
    return meta


def exclusion_reasons(table: RawReadingTable, max_kwh: float = DEFAULT_MAX_KWH) -> dict:
    """Users that the exclusion rules drop, with the reason."""
    if not max_kwh > 0:
        raise ValueError("max_kwh must be positive")
    reasons = {}
    for uid in table.users:
        if table.meta_for(uid).has_pv:
            reasons[uid] = "solar PV"
        elif np.any(table.readings[uid][1] > max_kwh):
            reasons[uid] = f"reading above {max_kwh:g} kWh"
    return reasons


def filter_users(table: RawReadingTable, max_kwh: float = DEFAULT_MAX_KWH) -> RawReadingTable:
    """Drop PV users and users with any reading above ``max_kwh``."""
    drop = exclusion_reasons(table, max_kwh)
    kept = {uid: rows for uid, rows in table.readings.items() if uid not in drop}
    return RawReadingTable(kept, table.meta)


def _runs(mask: np.ndarray):
    """(start, stop) pairs of consecutive True entries."""
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def _temperature_on(hours: np.ndarray, t_ts: np.ndarray, t_val: np.ndarray, max_gap: int):
    """Temperatures on ``hours``; NaN where no reading exists and the gap
    is too long (or open-ended) to interpolate."""
    out = np.full(hours.size, np.nan)
    pos = np.searchsorted(t_ts, hours)
    exact = (pos < t_ts.size) & (t_ts[np.minimum(pos, t_ts.size - 1)] == hours)
    out[exact] = t_val[pos[exact]]
    miss = np.flatnonzero(~exact & (pos > 0) & (pos < t_ts.size))
    if miss.size:
        lo, hi = pos[miss] - 1, pos[miss]
        gap = (t_ts[hi] - t_ts[lo]) // HOUR - 1
        ok = gap <= max_gap
        x = ((hours[miss] - t_ts[lo]) // HOUR).astype(float)
        span = ((t_ts[hi] - t_ts[lo]) // HOUR).astype(float)
        interp = t_val[lo] + (t_val[hi] - t_val[lo]) * x / span
        out[miss[ok]] = interp[ok]
    return out


def scale_segment(user_id, ts, kwh, temp, segment=0) -> ConsumptionSeries:
    lo, hi = float(kwh.min()), float(kwh.max())
    if not hi > lo:
        raise DegenerateScaleError(f"user {user_id}: constant consumption {lo} cannot be min-max scaled")
    mean = float(temp.mean())
    std = float(temp.std())
    if not std > 1e-12:
        std = 1.0
    y = (kwh - lo) / (hi - lo)
    record = ScalingRecord(lo, hi, mean, std)
    return ConsumptionSeries(user_id, ts, y, (temp - mean) / std, record, segment)


def align_and_scale(
    table: RawReadingTable,
    temps: TemperatureTable,
    station=None,
    max_gap: int = MAX_INTERP_GAP,
    min_hours: int = 24,
) -> list:
    """Join consumption with temperature and scale each contiguous stretch.

    Temperature holes of at most ``max_gap`` hours are filled by linear
    interpolation; longer holes and meter gaps split the user's data into
    separate segments. Segments shorter than ``min_hours`` are dropped.
    """
    t_ts, t_val = temps.series(station)
    out = []
    for uid in table.users:
        ts, kwh = table.readings[uid]
        temp = _temperature_on(ts, t_ts, t_val, max_gap)
        usable = ~np.isnan(temp)
        contiguous = np.concatenate([[True], np.diff(ts) == HOUR])
        starts = usable & ~np.concatenate([[False], usable[:-1]]) | (usable & ~contiguous)
        seg_id = np.cumsum(starts)
        segments = [np.flatnonzero(usable & (seg_id == k)) for k in np.unique(seg_id[usable])]
        segments = [s for s in segments if s.size >= min_hours]
        if not segments:
            raise EmptyOverlapError(f"user {uid}: no hours overlap with temperature readings")
        for k, idx in enumerate(segments):
            out.append(scale_segment(uid, ts[idx], kwh[idx], temp[idx], segment=k))
    return out


# Fuller's 1% critical values for the constant-only Dickey-Fuller regression.
_ADF_SIZES = np.array([25, 50, 100, 250, 500, np.inf])
_ADF_CRIT_1PCT = np.array([-3.75, -3.58, -3.51, -3.46, -3.44, -3.43])


def adf_critical_value_1pct(nobs: int) -> float:
    """Tabulated 1% value, interpolated linearly in 1/n."""
    inv = 1.0 / _ADF_SIZES
    x = 1.0 / max(nobs, 1)
    order = np.argsort(inv)
    return float(np.interp(x, inv[order], _ADF_CRIT_1PCT[order]))


@dataclass(frozen=True)
class AdfResult:
    test_statistic: float
    lags_used: int
    nobs: int
    critical_value_99: float
    reject_unit_root_99: bool


def _adf_design(y: np.ndarray, lags: int, start: int):
    """Rows for dy[k] ~ 1 + y[k] + dy[k-1..k-lags], k >= start."""
    dy = np.diff(y)
    k = np.arange(start, dy.size)
    cols = [np.ones(k.size), y[k]]
    cols += [dy[k - j] for j in range(1, lags + 1)]
    return np.column_stack(cols), dy[k]


def _ols_tstat(X, z):
    coef, _, rank, _ = np.linalg.lstsq(X, z, rcond=None)
    resid = z - X @ coef
    n, p = X.shape
    ssr = float(resid @ resid)
    sigma2 = ssr / (n - p)
    cov = sigma2 * np.linalg.pinv(X.T @ X)
    return coef[1] / np.sqrt(cov[1, 1]), ssr


def adf_test(series, max_lags: int = None) -> AdfResult:
    """Augmented Dickey-Fuller test with a constant.

    The number of lagged differences is chosen by AIC over 0..max_lags on a
    common estimation sample; the statistic is then recomputed with the
    chosen lag order on all usable rows.
    """
    y = np.asarray(getattr(series, "consumption", series), dtype=float).ravel()
    n = y.size
    if max_lags is None:
        max_lags = int(np.ceil(12.0 * (n / 100.0) ** 0.25))
    if max_lags < 0:
        raise ValueError("max_lags must be >= 0")
    if n <= max_lags + 2 or (n - 1 - max_lags) <= max_lags + 2:
        raise InsufficientDataError(f"ADF with {max_lags} lags needs more than {n} observations")

    best_lag, best_aic = 0, np.inf
    for p in range(max_lags + 1):
        X, z = _adf_design(y, p, max_lags)
        _, ssr = _ols_tstat(X, z)
        aic = z.size * np.log(ssr / z.size) + 2 * X.shape[1]
        if aic < best_aic - 1e-12:
            best_lag, best_aic = p, aic
    X, z = _adf_design(y, best_lag, best_lag)
    stat, _ = _ols_tstat(X, z)
    crit = adf_critical_value_1pct(z.size)
    return AdfResult(float(stat), best_lag, int(z.size), crit, bool(stat < crit))


def write_series(series: ConsumptionSeries, path) -> None:
    """One CSV per series; the first line is a ``#`` comment holding the
    scaling record as JSON."""
    header = {"user_id": series.user_id, "segment": series.segment}
    if series.scaling is not None:
        header["scaling"] = {
            "min": series.scaling.min,
            "max": series.scaling.max,
            "temp_mean": series.scaling.temp_mean,
            "temp_std": series.scaling.temp_std,
        }
    with Path(path).open("w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("timestamp,consumption,temperature\n")
        for ts, y, temp in zip(series.timestamps, series.consumption, series.temperature):
            fh.write(f"{format_hour(ts)},{float(y)!r},{float(temp)!r}\n")


def read_series(path) -> ConsumptionSeries:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ParseError(path, 1, "missing metadata line")
        header = json.loads(first[1:])
        rows = list(csv.reader(fh))
    if rows[0] != ["timestamp", "consumption", "temperature"]:
        raise ParseError(path, 2, "unexpected column header")
    body = rows[1:]
    ts = np.array([parse_hour(r[0]) for r in body], dtype="datetime64[h]")
    y = np.array([float(r[1]) for r in body])
    temp = np.array([float(r[2]) for r in body])
    scaling = ScalingRecord(**header["scaling"]) if "scaling" in header else None
    return ConsumptionSeries(header["user_id"], ts, y, temp, scaling, header.get("segment", 0))
