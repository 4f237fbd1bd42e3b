import numpy as np
import pytest

from latentdr import data

METER = "user_id,timestamp,consumption_kwh\n"
TEMP = "station_id,timestamp,temp_c\n"
META = "user_id,has_pv,has_automation,signup_date\n"


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def _hourly(start, n):
    return np.datetime64(start, "h") + np.arange(n).astype("timedelta64[h]")


def _files(tmp_path, meter_rows, temp_rows, meta_rows=None):
    meter = _write(tmp_path, "meter.csv", METER + "".join(meter_rows))
    temp = _write(tmp_path, "temp.csv", TEMP + "".join(temp_rows))
    meta = _write(tmp_path, "meta.csv", META + "".join(meta_rows)) if meta_rows is not None else None
    return meter, temp, meta


def _table(readings, meta=None):
    out = {}
    for uid, values in readings.items():
        out[uid] = (_hourly("2013-01-01T00", len(values)), np.asarray(values, dtype=float))
    return data.RawReadingTable(out, meta or {})


# -- parsing -------------------------------------------------------------------


def test_parse_hour_normalizes_to_utc():
    assert data.parse_hour("2013-01-01T05:00:00Z") == np.datetime64("2013-01-01T05", "h")
    assert data.parse_hour("2013-01-01T07:00:00+02:00") == np.datetime64("2013-01-01T05", "h")
    with pytest.raises(ValueError):
        data.parse_hour("2013-01-01T05:30:00Z")


def test_load_two_rows_sorted(tmp_path):
    meter, temp, _ = _files(
        tmp_path,
        ["a,2013-01-01T01:00:00Z,2.0\n", "a,2013-01-01T00:00:00Z,1.0\n"],
        ["s,2013-01-01T00:00:00Z,5.0\n"],
    )
    table, temps = data.load_readings(meter, temp)
    ts, kwh = table.readings["a"]
    assert table.n_rows() == 2
    assert list(kwh) == [1.0, 2.0]
    assert np.all(np.diff(ts) > np.timedelta64(0, "h"))
    assert temps.series()[1].tolist() == [5.0]


def test_duplicate_reading_is_rejected(tmp_path):
    meter, temp, _ = _files(
        tmp_path,
        ["a,2013-01-01T00:00:00Z,1.0\n", "a,2013-01-01T00:00:00Z,2.0\n"],
        ["s,2013-01-01T00:00:00Z,5.0\n"],
    )
    with pytest.raises(data.DuplicateKeyError) as info:
        data.load_readings(meter, temp)
    assert info.value.line == 3


def test_negative_consumption_is_rejected(tmp_path):
    meter, temp, _ = _files(tmp_path, ["a,2013-01-01T00:00:00Z,-1.0\n"], ["s,2013-01-01T00:00:00Z,5.0\n"])
    with pytest.raises(data.ParseError) as info:
        data.load_readings(meter, temp)
    assert info.value.line == 2


def test_unordered_temperature_is_rejected(tmp_path):
    meter, temp, _ = _files(
        tmp_path,
        ["a,2013-01-01T00:00:00Z,1.0\n"],
        ["s,2013-01-01T01:00:00Z,5.0\n", "s,2013-01-01T00:00:00Z,4.0\n"],
    )
    with pytest.raises(data.OrderError):
        data.load_readings(meter, temp)


def test_wrong_header_and_field_count(tmp_path):
    bad = _write(tmp_path, "bad.csv", "user,timestamp,kwh\n")
    temp = _write(tmp_path, "t.csv", TEMP)
    with pytest.raises(data.ParseError):
        data.load_readings(bad, temp)
    short = _write(tmp_path, "short.csv", METER + "a,2013-01-01T00:00:00Z\n")
    with pytest.raises(data.ParseError):
        data.load_readings(short, temp)


def test_metadata_parsing(tmp_path):
    meter, temp, meta = _files(
        tmp_path,
        ["a,2013-01-01T00:00:00Z,1.0\n"],
        ["s,2013-01-01T00:00:00Z,5.0\n"],
        ["a,false,true,2013-02-01T00:00:00Z\n", "b,1,0,\n"],
    )
    table, _ = data.load_readings(meter, temp, meta)
    assert table.meta_for("a") == data.UserMeta("a", False, True, np.datetime64("2013-02-01T00", "h"))
    assert table.meta_for("b").has_pv and table.meta_for("b").signup is None
    assert table.meta_for("zzz") == data.UserMeta("zzz")


# -- exclusion -----------------------------------------------------------------


def test_filter_drops_pv_user():
    table = _table({"pv": [1.0, 2.0], "ok": [1.0, 3.0]}, {"pv": data.UserMeta("pv", has_pv=True)})
    assert data.filter_users(table).users == ["ok"]


def test_filter_is_noop_on_clean_table():
    table = _table({"a": [1.0, 2.0], "b": [0.0, 49.0]})
    kept = data.filter_users(table, max_kwh=50.0)
    assert kept.users == ["a", "b"]
    for uid in kept.users:
        assert np.array_equal(kept.readings[uid][1], table.readings[uid][1])


def test_filter_drops_user_with_one_corrupt_reading():
    table = _table({"a": [1.0, 2.0], "b": [1.0, 500.0, 1.0], "c": [0.5, 50.0]})
    reasons = data.exclusion_reasons(table, max_kwh=50.0)
    assert reasons == {"b": "reading above 50 kWh"}
    assert data.filter_users(table, 50.0).users == ["a", "c"]


def test_filter_is_idempotent():
    table = _table({"a": [1.0, 2.0], "b": [1.0, 90.0], "c": [3.0, 4.0]}, {"c": data.UserMeta("c", True)})
    once = data.filter_users(table)
    twice = data.filter_users(once)
    assert once.users == twice.users == ["a"]


def test_filter_requires_positive_threshold():
    with pytest.raises(ValueError):
        data.filter_users(_table({"a": [1.0, 2.0]}), max_kwh=0.0)


# -- alignment and scaling -----------------------------------------------------


def _temps(values, start="2013-01-01T00"):
    values = np.asarray(values, dtype=float)
    keep = ~np.isnan(values)
    return data.TemperatureTable({"s": (_hourly(start, values.size)[keep], values[keep])})


def test_two_point_min_max():
    table = _table({"a": [2.0, 4.0]})
    (series,) = data.align_and_scale(table, _temps([1.0, 3.0]), min_hours=1)
    assert series.consumption.tolist() == [0.0, 1.0]
    assert series.temperature.tolist() == [-1.0, 1.0]


def test_constant_temperature_uses_unit_std():
    table = _table({"a": [2.0, 4.0, 3.0]})
    (series,) = data.align_and_scale(table, _temps([7.0, 7.0, 7.0]), min_hours=1)
    assert series.scaling.temp_std == 1.0
    assert np.all(series.temperature == 0.0)


def test_single_missing_temperature_hour_is_interpolated():
    temps = np.arange(24, dtype=float) * 2.0
    temps[10] = np.nan
    table = _table({"a": np.arange(24, dtype=float)})
    (series,) = data.align_and_scale(table, _temps(temps))
    assert len(series) == 24
    raw = series.scaling.invert_temperature(series.temperature)
    assert raw[10] == pytest.approx(20.0, abs=1e-12)


def test_long_temperature_gap_splits_series():
    temps = np.arange(60, dtype=float)
    temps[28:32] = np.nan
    table = _table({"a": np.sin(np.arange(60.0)) + 2})
    first, second = data.align_and_scale(table, _temps(temps))
    assert (len(first), len(second)) == (28, 28)
    assert (first.key, second.key) == ("a", "a.1")


def test_scaled_range_and_inversion():
    rng = np.random.default_rng(0)
    kwh = rng.uniform(0.1, 5.0, 48)
    table = _table({"a": kwh})
    (series,) = data.align_and_scale(table, _temps(rng.normal(10.0, 3.0, 48)))
    assert abs(series.consumption.min()) <= 1e-12 and abs(series.consumption.max() - 1.0) <= 1e-12
    assert np.allclose(series.scaling.invert(series.consumption), kwh, rtol=1e-9, atol=0)
    assert abs(series.temperature.mean()) < 1e-12 and abs(series.temperature.std() - 1.0) < 1e-12


def test_degenerate_consumption_and_empty_overlap():
    with pytest.raises(data.DegenerateScaleError):
        data.align_and_scale(_table({"a": [3.0, 3.0]}), _temps([1.0, 2.0]), min_hours=1)
    with pytest.raises(data.EmptyOverlapError):
        data.align_and_scale(_table({"a": [1.0, 2.0]}), _temps([1.0, 2.0], start="2014-01-01T00"), min_hours=1)


def test_series_rejects_gaps():
    ts = np.array(["2013-01-01T00", "2013-01-01T02"], dtype="datetime64[h]")
    with pytest.raises(data.DataError):
        data.ConsumptionSeries("a", ts, [0.0, 1.0], [0.0, 0.0])


def test_series_csv_round_trip(tmp_path):
    table = _table({"a": [1.0, 2.5, 4.0, 3.0]})
    (series,) = data.align_and_scale(table, _temps([1.0, 2.0, 5.0, 3.0]), min_hours=1)
    data.write_series(series, tmp_path / "a.csv")
    back = data.read_series(tmp_path / "a.csv")
    assert np.array_equal(back.consumption, series.consumption)
    assert np.array_equal(back.temperature, series.temperature)
    assert np.array_equal(back.timestamps, series.timestamps)
    assert back.scaling == series.scaling


def test_split_at_and_index_of():
    series = data.ConsumptionSeries("a", _hourly("2013-01-01T00", 5), np.linspace(0, 1, 5), np.zeros(5))
    before, after = series.split_at("2013-01-01T03")
    assert (len(before), len(after)) == (3, 2)
    assert series.index_of(np.datetime64("2013-01-01T04", "h")) == 4
    with pytest.raises(KeyError):
        series.index_of(np.datetime64("2013-01-02T04", "h"))


# -- ADF -----------------------------------------------------------------------


def test_adf_matches_statsmodels():
    adfuller = pytest.importorskip("statsmodels.tsa.stattools").adfuller
    rng = np.random.default_rng(11)
    for y in (np.cumsum(rng.normal(size=400)), rng.normal(size=400), 0.1 * np.arange(300) + rng.normal(size=300)):
        ours = data.adf_test(y, max_lags=6)
        stat, _, lags, nobs, _, _ = adfuller(y, maxlag=6, regression="c", autolag="AIC")
        assert ours.lags_used == lags and ours.nobs == nobs
        assert ours.test_statistic == pytest.approx(stat, rel=1e-9)


def test_adf_decision_matches_statistic():
    y = np.random.default_rng(12).normal(size=200)
    res = data.adf_test(y)
    assert res.reject_unit_root_99 == (res.test_statistic < res.critical_value_99)
    assert res == data.adf_test(y.copy())


def test_adf_critical_values_follow_the_table():
    assert data.adf_critical_value_1pct(100) == pytest.approx(-3.51)
    assert data.adf_critical_value_1pct(10**9) == pytest.approx(-3.43, abs=1e-6)
    assert -3.51 < data.adf_critical_value_1pct(200) < -3.46


def test_adf_insufficient_data():
    with pytest.raises(data.InsufficientDataError):
        data.adf_test(np.arange(5.0), max_lags=10)


def test_adf_small_monte_carlo():
    rng = np.random.default_rng(13)
    walk = sum(not data.adf_test(np.cumsum(rng.normal(size=500))).reject_unit_root_99 for _ in range(20))
    noise = sum(data.adf_test(rng.normal(size=500)).reject_unit_root_99 for _ in range(20))
    assert walk >= 18 and noise == 20
