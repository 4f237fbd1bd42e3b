"""Seeded generators of hourly consumption with a hidden daily High/Low
process, used by the tests, the acceptance suite and the demos."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ConsumptionSeries, ScalingRecord, format_hour, hour_of_day
from .hmm import DUAL_HOURS, build_state_space

# Typical residential shape: low overnight, morning bump, evening peak.
BASE_PROFILE = np.array([
    0.16, 0.14, 0.13, 0.13, 0.14, 0.16, 0.22, 0.28, 0.27, 0.24, 0.22, 0.22,
    0.23, 0.23, 0.24, 0.26, 0.30, 0.34, 0.36, 0.35, 0.31, 0.26, 0.21, 0.18,
])


@dataclass(frozen=True, eq=False)
class RegimeSample:
    series: ConsumptionSeries
    high: np.ndarray
    states: np.ndarray


def simulate_two_regime(
    days: int = 90,
    seed: int = 0,
    start: str = "2013-01-07T00",
    high_shift: float = 0.3,
    noise: float = 0.04,
    persistence: float = 2.0,
    temp_drive: float = 4.0,
    temp_effect: float = 0.02,
    weather_ar: float = 0.9,
    weather_scale: float = 0.5,
    user_id: str = "synthetic",
    temperature=None,
) -> RegimeSample:
    """Consumption whose level between 6:00 and 20:00 is raised by
    ``high_shift`` while a hidden High state is on.

    The High state is a sticky binary process whose log-odds are
    ``temp_drive * temperature + persistence * (+1 if High an hour ago else
    -1)``, so it tends to switch on in hot stretches (air conditioning) and
    rarely flips from one hour to the next. Temperature is a daily cycle
    plus a mean-reverting day-to-day weather term, standardized; pass
    ``temperature`` (standardized, one value per hour) to drive several
    users from the same weather.
    """
    rng = np.random.default_rng(seed)
    n = days * 24
    ts = np.datetime64(start, "h") + np.arange(n).astype("timedelta64[h]")
    hours = hour_of_day(ts)
    dual = np.isin(hours, DUAL_HOURS)
    if temperature is None:
        weather = np.zeros(days)
        shocks = rng.standard_normal(days)
        for d in range(days):
            weather[d] = weather_ar * (weather[d - 1] if d else 0.0) + weather_scale * shocks[d]
        temp = np.sin(2 * np.pi * (hours - 9) / 24.0) + np.repeat(weather, 24)
        temp = temp + 0.1 * rng.standard_normal(n)
        temp = (temp - temp.mean()) / temp.std()
    else:
        temp = np.asarray(temperature, dtype=float)
        if temp.shape != (n,):
            raise ValueError(f"temperature must hold {n} hourly values")
    high = np.zeros(n, dtype=int)
    for t in range(n):
        if not dual[t]:
            continue
        first = t == 0 or not dual[t - 1]
        drive = temp_drive * temp[t]
        if not first:
            drive += persistence * (2 * high[t - 1] - 1)
        high[t] = int(rng.random() < 1.0 / (1.0 + np.exp(-drive)))
    y = BASE_PROFILE[hours] + high_shift * high + temp_effect * temp + noise * rng.standard_normal(n)
    y = np.clip(y, 0.01, 1.0)

    space = build_state_space()
    states = np.array([
        space.states_for_hour(h)[0 if (len(space.states_for_hour(h)) == 1 or hi) else 1]
        for h, hi in zip(hours, high)
    ])
    series = ConsumptionSeries(user_id, ts, y, temp, ScalingRecord(0.0, 1.0, 0.0, 1.0))
    return RegimeSample(series, high, states)


def simulate_linear(days: int = 20, seed: int = 0, start: str = "2013-01-07T00",
                    user_id: str = "linear") -> ConsumptionSeries:
    """Noise-free series that is exactly linear in the forecasting
    covariates (lags plus an hour-of-day offset)."""
    rng = np.random.default_rng(seed)
    n = days * 24
    ts = np.datetime64(start, "h") + np.arange(n).astype("timedelta64[h]")
    hours = hour_of_day(ts)
    temp = rng.standard_normal(n)
    y = np.empty(n)
    y[:5] = 0.4 + 0.1 * rng.random(5)
    for t in range(5, n):
        y[t] = 0.5 * y[t - 1] + 0.1 * y[t - 2] + 0.01 * temp[t - 1] + 0.5 * BASE_PROFILE[hours[t]] + 0.05
    return ConsumptionSeries(user_id, ts, y, temp, ScalingRecord(0.0, 1.0, 0.0, 1.0))


@dataclass(frozen=True)
class ProgramFiles:
    meter: Path
    temperature: Path
    metadata: Path
    events: Path


def write_program_files(
    directory,
    n_users: int = 4,
    days: int = 90,
    signup_day: int = 60,
    events_per_user: int = 20,
    reduction_kwh: float = 0.6,
    seed: int = 0,
    start: str = "2013-01-07T00",
    include_pv: bool = True,
    include_corrupt: bool = True,
) -> ProgramFiles:
    """Raw CSV inputs for a small DR program.

    Regular users follow :func:`simulate_two_regime` in kWh (roughly 0.3 to
    3 kWh/h). After signup, ``events_per_user`` random hours between 6:00 and
    20:00 become DR events whose consumption drops by a Uniform[0,
    ``reduction_kwh``] amount. Optionally adds one PV user and one user with a
    corrupt reading so the exclusion rules have something to do.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    t0 = np.datetime64(start, "h")
    signup = t0 + np.timedelta64(signup_day * 24, "h")
    users = [f"u{i:03d}" for i in range(n_users)]
    extra = (["pv001"] if include_pv else []) + (["bad001"] if include_corrupt else [])

    meter_rows, meta_rows, event_rows = [], [], []
    temp_series = simulate_two_regime(days=days, seed=seed * 1000 + 999, start=start).series
    for i, uid in enumerate(users + extra):
        sample = simulate_two_regime(days=days, seed=seed * 1000 + i, start=start, user_id=uid,
                                     temperature=temp_series.temperature)
        kwh = 0.2 + 4.0 * sample.series.consumption
        if uid in users:
            ts = sample.series.timestamps
            eligible = np.flatnonzero((ts >= signup) & np.isin(hour_of_day(ts), DUAL_HOURS))
            chosen = np.sort(rng.choice(eligible, size=min(events_per_user, eligible.size), replace=False))
            kwh[chosen] = np.maximum(kwh[chosen] - rng.uniform(0.0, reduction_kwh, chosen.size), 0.0)
            event_rows += [(uid, format_hour(ts[j])) for j in chosen]
        if uid == "bad001":
            kwh[len(kwh) // 2] = 500.0
        meter_rows += [(uid, format_hour(t), f"{v:.6f}") for t, v in zip(sample.series.timestamps, kwh)]
        meta_rows.append((uid, str(uid == "pv001").lower(), str(i % 2 == 1).lower(), format_hour(signup)))

    temps_c = 15.0 + 6.0 * temp_series.temperature
    temp_rows = [("KSTN", format_hour(t), f"{v:.3f}") for t, v in zip(temp_series.timestamps, temps_c)]
    files = ProgramFiles(directory / "meter.csv", directory / "temperature.csv",
                         directory / "users.csv", directory / "events.csv")
    for path, header, rows in (
        (files.meter, ["user_id", "timestamp", "consumption_kwh"], meter_rows),
        (files.temperature, ["station_id", "timestamp", "temp_c"], temp_rows),
        (files.metadata, ["user_id", "has_pv", "has_automation", "signup_date"], meta_rows),
        (files.events, ["user_id", "timestamp"], event_rows),
    ):
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    return files
