import logging
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqforecast.ingest import (
    COLUMNS, INPUT_FEATURES, SCHEMA, TARGET_POLLUTANTS, IngestError, RawTable,
    merge_tables, parse_source_csv, validate_schema, write_raw_csv,
)


def _write(path, text):
    path.write_text(text)
    return path


def _full_table(n=3, start=0):
    t0 = datetime(2020, 1, 1, tzinfo=timezone.utc)
    stamps = [t0 + timedelta(days=start + i) for i in range(n)]
    rng = np.random.default_rng(start)
    cols = {c: rng.uniform(1, 50, n) for c in COLUMNS}
    return RawTable(stamps, cols)


class TestSchema:
    def test_counts_and_roles(self):
        assert len(SCHEMA) == 10
        assert len(INPUT_FEATURES) == 6
        assert set(TARGET_POLLUTANTS) == {"o3_ppm", "co_ppm", "so2_ppb", "no2_ppb"}
        assert all(v.source == "NOAA" for v in SCHEMA if v.role == "input_feature")
        assert all(v.source == "EPA" for v in SCHEMA if v.role == "target_pollutant")

    def test_units(self):
        units = {v.name: v.units for v in SCHEMA}
        assert units == {
            "temperature_c": "C", "wind_speed_ms": "m/s", "wind_direction_deg": "degrees",
            "relative_humidity_pct": "%", "precipitable_water_cm": "cm",
            "pressure_mbar": "mbar", "o3_ppm": "ppm", "co_ppm": "ppm",
            "so2_ppb": "ppb", "no2_ppb": "ppb",
        }


class TestParse:
    def test_three_full_rows(self, tmp_path):
        header = "timestamp," + ",".join(COLUMNS)
        rows = [f"2020-01-0{i + 1}," + ",".join(str(j + i) for j in range(10)) for i in range(3)]
        t = parse_source_csv(_write(tmp_path / "a.csv", "\n".join([header, *rows]) + "\n"))
        assert len(t) == 3
        assert sum(t.n_absent(c) for c in COLUMNS) == 0
        assert t.timestamps[0].tzinfo is not None

    def test_empty_cell_is_absent(self, tmp_path):
        text = "timestamp,co_ppm,o3_ppm\n2020-01-01,0.5,0.04\n2020-01-02,,0.05\n2020-01-03,NA,NaN\n"
        t = parse_source_csv(_write(tmp_path / "a.csv", text))
        assert np.isnan(t.columns["co_ppm"][1])
        assert t.n_absent("co_ppm") == 2
        assert t.n_absent("o3_ppm") == 1

    def test_single_absent_value(self, tmp_path):
        text = "timestamp,co_ppm\n2020-01-01,0.5\n2020-01-02,\n2020-01-03,0.7\n"
        t = parse_source_csv(_write(tmp_path / "a.csv", text))
        assert t.n_absent("co_ppm") == 1

    def test_out_of_order(self, tmp_path):
        text = "timestamp,co_ppm\n2020-01-02,0.5\n2020-01-01,0.6\n"
        with pytest.raises(IngestError, match="non-monotonic timestamp"):
            parse_source_csv(_write(tmp_path / "a.csv", text))

    def test_bad_timestamp(self, tmp_path):
        with pytest.raises(IngestError, match="timestamp"):
            parse_source_csv(_write(tmp_path / "a.csv", "timestamp,co_ppm\nyesterday,1\n"))

    def test_non_numeric(self, tmp_path):
        with pytest.raises(IngestError, match="co_ppm"):
            parse_source_csv(_write(tmp_path / "a.csv", "timestamp,co_ppm\n2020-01-01,abc\n"))

    def test_unreadable(self, tmp_path):
        with pytest.raises(IngestError):
            parse_source_csv(tmp_path / "nope.csv")

    def test_unknown_column_warns(self, tmp_path, caplog):
        text = "timestamp,co_ppm,station\n2020-01-01,0.5,LA\n"
        with caplog.at_level(logging.WARNING):
            t = parse_source_csv(_write(tmp_path / "a.csv", text))
        assert "station" not in t.columns
        assert "station" in caplog.text

    def test_offsets_normalized_to_utc(self, tmp_path):
        text = "timestamp,co_ppm\n2020-01-01T23:00:00-02:00,1\n2020-01-02T02:00:00Z,2\n"
        t = parse_source_csv(_write(tmp_path / "a.csv", text))
        assert t.timestamps[0] == datetime(2020, 1, 2, 1, tzinfo=timezone.utc)


class TestMerge:
    def test_union(self):
        t0 = datetime(2020, 1, 1, tzinfo=timezone.utc)
        days = lambda a, b: [t0 + timedelta(days=i) for i in range(a, b)]
        noaa = RawTable(days(0, 5), {c: np.arange(5.0) for c in INPUT_FEATURES})
        epa = RawTable(days(2, 7), {c: np.arange(5.0) for c in TARGET_POLLUTANTS})
        m = merge_tables(noaa, epa)
        assert len(m) == 7 and set(m.columns) == set(COLUMNS)
        assert np.isnan(m.columns["temperature_c"][5:]).all()
        assert np.isnan(m.columns["o3_ppm"][:2]).all()
        assert not np.isnan(m.columns["o3_ppm"][2:]).any()

    def test_empty_is_identity(self):
        a = _full_table()
        assert merge_tables(a, RawTable([], {})).equals(a)

    def test_duplicate_column(self):
        a = RawTable(_full_table().timestamps, {"o3_ppm": np.ones(3)})
        with pytest.raises(IngestError, match="duplicate column"):
            merge_tables(a, a)

    @given(st.sets(st.integers(0, 30), max_size=12), st.sets(st.integers(0, 30), max_size=12))
    @settings(max_examples=50, deadline=None)
    def test_commutative(self, da, db):
        t0 = datetime(2020, 1, 1, tzinfo=timezone.utc)
        a = RawTable([t0 + timedelta(days=d) for d in sorted(da)], {"o3_ppm": np.array(sorted(da), float)})
        b = RawTable([t0 + timedelta(days=d) for d in sorted(db)], {"temperature_c": np.array(sorted(db), float) * 2})
        assert merge_tables(a, b).equals(merge_tables(b, a))


class TestValidate:
    def test_conforming(self):
        assert validate_schema(_full_table()).issues == []

    def test_humidity_flag(self):
        t = _full_table()
        t.columns["relative_humidity_pct"][1] = 140.0
        rep = validate_schema(t)
        assert [f[0] for f in rep.range_flags] == ["relative_humidity_pct"]

    def test_wind_direction_360_flagged(self):
        t = _full_table()
        t.columns["wind_direction_deg"][0] = 360.0
        assert validate_schema(t).range_flags[0][:2] == ("wind_direction_deg", 0)

    def test_missing_column(self):
        t = _full_table()
        del t.columns["so2_ppb"]
        assert "missing column: so2_ppb" in validate_schema(t).issues

    def test_absent_fraction(self):
        t = _full_table(4)
        t.columns["co_ppm"][:2] = np.nan
        assert validate_schema(t).absent_fraction["co_ppm"] == 0.5


class TestRoundTrip:
    @given(st.lists(st.one_of(st.none(), st.floats(-1e300, 1e300, allow_nan=False)),
                    min_size=1, max_size=15))
    @settings(max_examples=60, deadline=None)
    def test_parse_write_parse_fixed_point(self, tmp_path_factory, values):
        d = tmp_path_factory.mktemp("rt")
        t0 = datetime(2020, 1, 1, 6, tzinfo=timezone.utc)
        col = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
        t = RawTable([t0 + timedelta(hours=7 * i) for i in range(len(values))], {"co_ppm": col})
        write_raw_csv(t, d / "a.csv")
        once = parse_source_csv(d / "a.csv")
        write_raw_csv(once, d / "b.csv")
        twice = parse_source_csv(d / "b.csv")
        assert once.equals(t)
        assert twice.equals(once)
        assert (d / "a.csv").read_text() == (d / "b.csv").read_text()
