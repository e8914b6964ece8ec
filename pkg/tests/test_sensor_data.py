import calendar
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greensentry.errors import DataError, ParseError
from greensentry.sensor_data import (
    FEATURES, Dataset, RawSeries, SensorRecord, align_merge, format_asctime, format_label,
    format_timestamp, forward_fill, ingest_csv, parse_label, parse_timestamp, read_csv, write_csv,
)

APR16_1019 = calendar.timegm((2021, 4, 16, 10, 19, 0)) // 60


def _csv(text):
    return io.BytesIO(text.encode())


class TestParseTimestamp:
    def test_asctime(self):
        assert parse_timestamp("Fri Apr 16 10:19:00 2021") == APR16_1019

    def test_iso_same_instant(self):
        assert parse_timestamp("2021-04-16T10:19:00Z") == APR16_1019

    def test_seconds_truncated(self):
        assert parse_timestamp("Fri Apr 16 10:19:59 2021") == APR16_1019

    def test_padded_day(self):
        assert parse_timestamp("Tue Apr  6 08:00:00 2021") == calendar.timegm((2021, 4, 6, 8, 0, 0)) // 60

    def test_iso_offset(self):
        assert parse_timestamp("2021-04-16T12:19:00+02:00") == APR16_1019

    @pytest.mark.parametrize("text,field", [
        ("April the 16th", "unrecognized"),
        ("Fri Apx 16 10:19:00 2021", "month"),
        ("Fri Apr 16 25:19:00 2021", "hour"),
        ("Thu Apr 16 10:19:00 2021", "weekday"),
        ("2021-13-16T10:19:00Z", "month"),
        ("2021-02-30T10:19:00Z", "day"),
    ])
    def test_malformed(self, text, field):
        with pytest.raises(ParseError, match=field):
            parse_timestamp(text)

    @given(st.integers(0, 60_000_000))
    def test_roundtrip_both_formats(self, minute):
        assert parse_timestamp(format_timestamp(minute)) == minute
        assert parse_timestamp(format_asctime(minute)) == minute


class TestIngest:
    def test_three_rows(self):
        src = _csv("timestamp,value\n"
                   "Fri Apr 16 10:19:00 2021,85.44\n"
                   "Fri Apr 16 10:20:00 2021,85.5\n"
                   "Fri Apr 16 10:21:00 2021,85.6\n")
        res = ingest_csv(src, "temperature")
        assert len(res.series) == 3
        assert res.warnings == 0

    def test_non_numeric_cell(self):
        src = _csv("timestamp,value\n2021-04-16T10:19:00Z,1500\n2021-04-16T10:20:00Z,Dry\n")
        with pytest.raises(ParseError, match="row 3"):
            ingest_csv(src, "moisture")

    def test_duplicate_keeps_last(self):
        src = _csv("timestamp,value\n2021-04-16T10:19:00Z,1\n2021-04-16T10:19:30Z,2\n")
        series, dups, _ = ingest_csv(src, "light")
        assert len(series) == 1 and dups == 1
        assert series.values[0] == 2.0

    def test_out_of_order_sorted(self):
        src = _csv("timestamp,value\n2021-04-16T10:21:00Z,3\n2021-04-16T10:19:00Z,1\n")
        series, _, reordered = ingest_csv(src, "light")
        assert reordered == 1
        assert list(series.values) == [1.0, 3.0]

    def test_text_stream_and_path(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("timestamp,value\n2021-04-16T10:19:00Z,36.9\n")
        assert ingest_csv(p, "humidity").series == ingest_csv(io.StringIO(p.read_text()), "humidity").series

    def test_unknown_sensor(self):
        with pytest.raises(DataError):
            ingest_csv(_csv("timestamp,value\n"), "pressure")


class TestForwardFill:
    def test_ten_minute_logger(self):
        s = RawSeries("temperature", [APR16_1019, APR16_1019 + 10], [85.44, 86.0])
        out, breaks = forward_fill(s, 1, 10)
        assert list(out.timestamps) == list(range(APR16_1019, APR16_1019 + 11))
        assert list(out.values[:10]) == [85.44] * 10
        assert out.values[10] == 86.0
        assert breaks == ()

    def test_identity_on_minute_series(self):
        s = RawSeries("light", np.arange(5), [1.0, 2, 3, 4, 5])
        assert forward_fill(s).series == s

    def test_capped_gap_hand_enumerated(self):
        s = RawSeries("humidity", [0, 45, 46], [1.0, 2.0, 3.0])
        out, breaks = forward_fill(s, 1, 10)
        assert list(out.timestamps) == list(range(0, 11)) + [45, 46]
        assert list(out.values) == [1.0] * 11 + [2.0, 3.0]
        assert breaks == (45,)
        assert out.segment_starts() == (0, 11)

    def test_empty(self):
        with pytest.raises(DataError):
            forward_fill(RawSeries("light", [], []))

    @given(st.lists(st.integers(1, 30), min_size=0, max_size=20), st.integers(1, 15))
    def test_superset_and_spacing(self, gaps, max_fill):
        ts = np.cumsum([0] + gaps)
        s = RawSeries("light", ts, np.arange(ts.size, dtype=float))
        out, breaks = forward_fill(s, 1, max_fill)
        assert set(ts) <= set(out.timestamps)
        # inside each filled span, spacing is exactly one minute
        assert len(breaks) == sum(g - 1 > max_fill for g in gaps)
        d = np.diff(out.timestamps)
        assert np.all((d == 1) | np.isin(out.timestamps[1:], breaks))


def _series(sid, ts):
    return RawSeries(sid, ts, np.full(len(ts), float(FEATURES.index(sid))))


class TestAlignMerge:
    def test_full_overlap(self):
        ds, dropped = align_merge({s: _series(s, np.arange(100)) for s in FEATURES})
        assert len(ds) == 100
        assert all(v == 0 for v in dropped.values())

    def test_missing_minute(self):
        sets = {s: _series(s, np.arange(100)) for s in FEATURES}
        sets["light"] = _series("light", np.delete(np.arange(100), 50))
        ds, dropped = align_merge(sets)
        assert len(ds) == 99 and 50 not in ds.timestamps
        assert dropped["moisture"] == 1 and dropped["light"] == 0
        assert ds.segment_starts == (0, 50)

    def test_no_overlap(self):
        sets = {s: _series(s, np.arange(10)) for s in FEATURES}
        sets["humidity"] = _series("humidity", np.arange(20, 30))
        with pytest.raises(DataError, match="no overlapping time range"):
            align_merge(sets)

    def test_missing_sensor(self):
        with pytest.raises(DataError):
            align_merge({"light": _series("light", [0])})

    @settings(max_examples=60)
    @given(st.lists(st.sets(st.integers(0, 60), min_size=1), min_size=5, max_size=5))
    def test_against_set_intersection(self, stamp_sets):
        expected = set.intersection(*stamp_sets)
        sets = {sid: _series(sid, sorted(ts)) for sid, ts in zip(FEATURES, stamp_sets)}
        if not expected:
            with pytest.raises(DataError):
                align_merge(sets)
            return
        ds, dropped = align_merge(sets)
        assert list(ds.timestamps) == sorted(expected)
        for sid, ts in zip(FEATURES, stamp_sets):
            assert dropped[sid] == len(ts - expected)


class TestDatasetCsv:
    def _one(self, label=None):
        return Dataset([APR16_1019], [[1550.0, 300.0, 10.0, 85.44, 36.9]],
                       None if label is None else (label,))

    def test_one_record_two_lines(self):
        buf = io.BytesIO()
        write_csv(self._one(), buf)
        text = buf.getvalue().decode()
        assert text == ("timestamp,moisture,light,air_quality,temperature_f,humidity_pct,label\n"
                        "2021-04-16T10:19:00Z,1550,300,10,85.44,36.9,\n")

    def test_labeled_rows_hand_written(self):
        ds = Dataset([0, 1], [[1550, 300, 10, 53, 40], [1550, 300, 25, 53, 40]],
                     (("temp_low",), ("temp_low", "air_elevated")))
        buf = io.StringIO()
        write_csv(ds, buf)
        assert buf.getvalue().splitlines()[1:] == [
            "1970-01-01T00:00:00Z,1550,300,10,53,40,anomalous:temp_low",
            "1970-01-01T00:01:00Z,1550,300,25,53,40,anomalous:temp_low;air_elevated",
        ]

    @pytest.mark.parametrize("label", [None, (), ("a", "b")])
    def test_roundtrip(self, label):
        ds = self._one(label)
        buf = io.BytesIO()
        write_csv(ds, buf)
        buf.seek(0)
        assert read_csv(buf) == ds

    @given(st.lists(st.tuples(st.integers(1, 5), st.lists(
        st.floats(-1e4, 1e4, allow_nan=False).map(lambda v: round(v, 6)), min_size=5, max_size=5),
        st.sampled_from([(), ("temp_low",), ("air_high", "air_elevated")])), min_size=1, max_size=30))
    def test_roundtrip_property(self, rows):
        ts = np.cumsum([r[0] for r in rows])
        ds = Dataset(ts, [r[1] for r in rows], tuple(r[2] for r in rows))
        buf = io.StringIO()
        write_csv(ds, buf)
        buf.seek(0)
        assert read_csv(buf) == ds

    def test_label_text(self):
        assert format_label(None) == "" and format_label(()) == "normal"
        assert parse_label("anomalous:x;y") == ("x", "y")
        with pytest.raises(ParseError):
            parse_label("weird")


class TestDatasetType:
    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            Dataset([0], [[np.nan, 0, 0, 0, 0]])

    def test_rejects_unordered(self):
        with pytest.raises(DataError):
            Dataset([1, 0], np.zeros((2, 5)))

    def test_immutable(self):
        ds = Dataset([0], np.zeros((1, 5)))
        with pytest.raises(ValueError):
            ds.values[0, 0] = 1.0

    def test_records_roundtrip(self):
        ds = Dataset([0, 1], [[1, 2, 3, 4, 5], [6, 7, 8, 9, 10]], ((), ("x",)))
        recs = list(ds.records())
        assert isinstance(recs[0], SensorRecord) and recs[1].is_anomalous
        assert Dataset.from_records(recs) == ds
