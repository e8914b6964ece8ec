"""Time-series data model, CSV ingestion, forward-fill and multi-sensor merging.

Timestamps are integer minutes since the Unix epoch (UTC). Seconds are
discarded on parse; every downstream operation groups by the minute.

A :class:`Dataset` stores its rows column-wise: an ``int64`` vector of
timestamps, an ``(n, 5)`` float64 matrix in :data:`FEATURES` order and a
per-row label. Segments (maximal runs of 1-minute spacing) are derived
from the timestamps, so a gap created anywhere in the pipeline is a
segment break automatically.
"""
from __future__ import annotations

import csv
import io
import math
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import DataError, ParseError

FEATURES = ("moisture", "light", "air_quality", "temperature", "humidity")
SENSOR_IDS = FEATURES
CSV_COLUMNS = ("moisture", "light", "air_quality", "temperature_f", "humidity_pct")
DATASET_HEADER = ("timestamp",) + CSV_COLUMNS + ("label",)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
           "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
_ISO_RE = re.compile(
    r"^(?P<year>\d{4})-(?P<month>\d{2})-(?P<day>\d{2})[T ]"
    r"(?P<hour>\d{2}):(?P<minute>\d{2})(?::(?P<second>\d{2})(?:\.\d+)?)?"
    r"(?P<tz>Z|[+-]\d{2}:?\d{2})?$"
)

Label = Optional[tuple]  # None = unlabeled, () = normal, (rule ids...) = anomalous
Source = Union[str, Path, IO[bytes], IO[str]]


# --------------------------------------------------------------------------
# timestamps

def _to_epoch_minute(dt: datetime) -> int:
    return int((dt - _EPOCH).total_seconds() // 60)


def _field(name, text, lo, hi):
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"invalid {name} {text!r}") from None
    if not lo <= value <= hi:
        raise ParseError(f"{name} out of range: {text!r}")
    return value


def _build(year, month, day, hour, minute, second, offset=timedelta(0)):
    try:
        dt = datetime(year, month, day, hour, minute, second, tzinfo=timezone(offset))
    except ValueError as exc:
        raise ParseError(f"invalid day {day} for {year}-{month:02d}: {exc}") from None
    return _to_epoch_minute(dt.astimezone(timezone.utc))


def _parse_asctime(parts):
    wday, mon, day, clock, year = parts
    if wday not in _WEEKDAYS:
        raise ParseError(f"invalid weekday {wday!r}")
    if mon not in _MONTHS:
        raise ParseError(f"invalid month {mon!r}")
    month = _MONTHS.index(mon) + 1
    pieces = clock.split(":")
    if len(pieces) != 3:
        raise ParseError(f"invalid time {clock!r}")
    hour = _field("hour", pieces[0], 0, 23)
    minute = _field("minute", pieces[1], 0, 59)
    second = _field("second", pieces[2], 0, 61)
    minutes = _build(_field("year", year, 1, 9999), month, _field("day", day, 1, 31),
                     hour, minute, min(second, 59))
    actual = (datetime(1970, 1, 1) + timedelta(minutes=minutes)).weekday()
    if _WEEKDAYS[actual] != wday:
        raise ParseError(f"weekday {wday!r} does not match date (expected {_WEEKDAYS[actual]!r})")
    return minutes


def _parse_iso(m):
    offset = timedelta(0)
    tz = m["tz"]
    if tz and tz != "Z":
        sign = -1 if tz[0] == "-" else 1
        digits = tz[1:].replace(":", "")
        offset = sign * timedelta(hours=_field("utc offset hours", digits[:2], 0, 23),
                                  minutes=_field("utc offset minutes", digits[2:], 0, 59))
    return _build(
        _field("year", m["year"], 1, 9999),
        _field("month", m["month"], 1, 12),
        _field("day", m["day"], 1, 31),
        _field("hour", m["hour"], 0, 23),
        _field("minute", m["minute"], 0, 59),
        min(_field("second", m["second"] or "0", 0, 61), 59),
        offset,
    )


def parse_timestamp(text: str) -> int:
    """Parse an asctime (``Fri Apr 16 10:19:00 2021``) or ISO-8601 string.

    Returns the epoch minute; seconds are truncated. Naive times are UTC.
    """
    text = text.strip()
    m = _ISO_RE.match(text)
    if m:
        return _parse_iso(m)
    parts = text.split()
    if len(parts) == 5:
        return _parse_asctime(parts)
    raise ParseError(f"unrecognized timestamp {text!r}: expected asctime or ISO-8601")


def format_timestamp(epoch_minute: int) -> str:
    dt = _EPOCH + timedelta(minutes=int(epoch_minute))
    return dt.strftime("%Y-%m-%dT%H:%M:00Z")


def format_asctime(epoch_minute: int) -> str:
    dt = _EPOCH + timedelta(minutes=int(epoch_minute))
    return f"{_WEEKDAYS[dt.weekday()]} {_MONTHS[dt.month - 1]} {dt.day:2d} {dt:%H:%M:%S %Y}"


def format_value(value: float) -> str:
    """Six decimal places with trailing zeros removed."""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


# --------------------------------------------------------------------------
# types

def _frozen(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RawSeries:
    """Samples from one sensor, strictly increasing in time."""

    sensor_id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.sensor_id not in SENSOR_IDS:
            raise DataError(f"unknown sensor id {self.sensor_id!r}")
        ts = _frozen(np.array(self.timestamps, dtype=np.int64).reshape(-1))
        vals = _frozen(np.array(self.values, dtype=np.float64).reshape(-1))
        if ts.shape != vals.shape:
            raise DataError("timestamps and values differ in length")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise DataError("series contains non-finite values")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return int(self.timestamps.size)

    def __eq__(self, other):
        if not isinstance(other, RawSeries):
            return NotImplemented
        return (self.sensor_id == other.sensor_id
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values))

    def segment_starts(self) -> tuple:
        return _segment_starts(self.timestamps)


@dataclass(frozen=True)
class SensorRecord:
    timestamp: int
    moisture: float
    light: float
    air_quality: float
    temperature: float
    humidity: float
    label: Label = None

    @property
    def features(self) -> tuple:
        return (self.moisture, self.light, self.air_quality, self.temperature, self.humidity)

    @property
    def is_anomalous(self) -> bool:
        return bool(self.label)


def _segment_starts(ts):
    if ts.size == 0:
        return ()
    breaks = np.flatnonzero(np.diff(ts) != 1) + 1
    return (0,) + tuple(int(i) for i in breaks)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Minute-aligned multivariate records in fixed feature order.

    ``labels`` is ``None`` for a fully unlabeled dataset, otherwise a tuple
    with one entry per row: ``None`` (unlabeled), ``()`` (normal) or a
    tuple of fired rule ids (anomalous).
    """

    timestamps: np.ndarray
    values: np.ndarray
    labels: Optional[tuple] = None
    feature_order: tuple = field(default=FEATURES, init=False)

    def __post_init__(self):
        ts = _frozen(np.array(self.timestamps, dtype=np.int64).reshape(-1))
        vals = np.array(self.values, dtype=np.float64)
        if vals.size == 0:
            vals = vals.reshape(0, len(FEATURES))
        if vals.ndim != 2 or vals.shape[1] != len(FEATURES):
            raise DataError(f"values must have shape (n, {len(FEATURES)}), got {vals.shape}")
        if vals.shape[0] != ts.size:
            raise DataError("timestamps and values differ in length")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise DataError("dataset contains non-finite values")
        labels = self.labels
        if labels is not None:
            labels = tuple(None if lab is None else tuple(lab) for lab in labels)
            if len(labels) != ts.size:
                raise DataError("labels and timestamps differ in length")
            if all(lab is None for lab in labels) and labels:
                labels = None
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.timestamps.size)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values)
                and self.labels == other.labels)

    @property
    def segment_starts(self) -> tuple:
        """Row indices at which a new contiguous segment begins."""
        return _segment_starts(self.timestamps)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None and all(lab is not None for lab in self.labels)

    def anomaly_mask(self) -> np.ndarray:
        if not self.is_labeled:
            raise DataError("dataset is not labeled")
        return np.array([bool(lab) for lab in self.labels], dtype=bool)

    def column(self, feature: str) -> np.ndarray:
        return self.values[:, FEATURES.index(feature)]

    def take(self, index) -> "Dataset":
        """Subset rows by integer index or boolean mask, preserving order."""
        idx = np.arange(len(self))[index]
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return Dataset(self.timestamps[idx], self.values[idx], labels)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.timestamps, self.values, labels)

    def with_values(self, values) -> "Dataset":
        return Dataset(self.timestamps, values, self.labels)

    def records(self) -> Iterator[SensorRecord]:
        for i in range(len(self)):
            lab = None if self.labels is None else self.labels[i]
            yield SensorRecord(int(self.timestamps[i]), *map(float, self.values[i]), label=lab)

    @classmethod
    def from_records(cls, records: Iterable[SensorRecord]) -> "Dataset":
        records = list(records)
        labels = tuple(r.label for r in records)
        return cls(
            np.array([r.timestamp for r in records], dtype=np.int64),
            np.array([r.features for r in records], dtype=np.float64).reshape(-1, len(FEATURES)),
            labels if any(lab is not None for lab in labels) else None,
        )


# --------------------------------------------------------------------------
# ingestion

@contextmanager
def _text_reader(source: Source):
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            yield fh
    elif isinstance(source, io.TextIOBase):
        yield source
    else:
        wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
        try:
            yield wrapper
        finally:
            wrapper.detach()


@contextmanager
def _text_writer(sink: Source):
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="") as fh:
            yield fh
    elif isinstance(sink, io.TextIOBase):
        yield sink
    else:
        wrapper = io.TextIOWrapper(sink, encoding="utf-8", newline="")
        try:
            yield wrapper
            wrapper.flush()
        finally:
            wrapper.detach()


def _parse_value(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}: non-numeric {column} value {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: non-finite {column} value {text!r}")
    return value


class IngestResult(NamedTuple):
    series: RawSeries
    duplicates: int
    reordered: int

    @property
    def warnings(self) -> int:
        return self.duplicates + self.reordered


def ingest_csv(source: Source, sensor_id: str) -> IngestResult:
    """Read a ``timestamp,value`` CSV for one sensor.

    Rows are sorted by time; repeated minutes keep the last occurrence.
    Row numbers in errors are 1-based file lines (the header is line 1).
    """
    if sensor_id not in SENSOR_IDS:
        raise DataError(f"unknown sensor id {sensor_id!r}")
    samples = {}
    duplicates = reordered = 0
    last = None
    with _text_reader(source) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["timestamp", "value"]:
            raise ParseError("row 1: expected header 'timestamp,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"row {lineno}: expected 2 columns, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
            except ParseError as exc:
                raise ParseError(f"row {lineno}: {exc}") from None
            value = _parse_value(row[1].strip(), lineno, "value")
            if ts in samples:
                duplicates += 1
                samples.pop(ts)
            elif last is not None and ts < last:
                reordered += 1
            samples[ts] = value
            last = ts if last is None else max(last, ts)
    keys = sorted(samples)
    series = RawSeries(sensor_id, np.array(keys, dtype=np.int64),
                       np.array([samples[k] for k in keys], dtype=np.float64))
    return IngestResult(series, duplicates, reordered)


class FillResult(NamedTuple):
    series: RawSeries
    breaks: tuple  # epoch minutes that start a new segment after an unfilled gap


def forward_fill(series: RawSeries, interval_minutes: int = 1, max_fill_minutes: int = 10) -> FillResult:
    """Carry each sample forward into the following empty minute slots.

    A sample covers at most ``max_fill_minutes`` minutes after itself; a
    longer gap is left open and the next sample starts a new segment.
    """
    if len(series) == 0:
        raise DataError("cannot forward-fill an empty series")
    if interval_minutes != 1:
        raise DataError("only a 1-minute target interval is supported")
    if max_fill_minutes < interval_minutes:
        raise DataError("max_fill_minutes must be >= interval_minutes")
    ts = series.timestamps
    gaps = np.diff(ts)
    reach = np.minimum(np.append(gaps - 1, 0), max_fill_minutes)
    counts = reach + 1
    out_ts = np.repeat(ts, counts) + (np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
    out_vals = np.repeat(series.values, counts)
    breaks = tuple(int(t) for t in ts[1:][gaps - 1 > max_fill_minutes])
    return FillResult(RawSeries(series.sensor_id, out_ts, out_vals), breaks)


class MergeResult(NamedTuple):
    dataset: Dataset
    dropped: dict  # sensor id -> minutes present for that sensor but absent from the merge


def align_merge(series_set: Mapping[str, RawSeries]) -> MergeResult:
    """Inner-join one series per sensor on the minute."""
    missing = [s for s in SENSOR_IDS if s not in series_set]
    if missing:
        raise DataError(f"missing sensors: {', '.join(missing)}")
    common = None
    for sid in SENSOR_IDS:
        ts = series_set[sid].timestamps
        common = ts if common is None else np.intersect1d(common, ts, assume_unique=True)
    if common.size == 0:
        raise DataError("no overlapping time range")
    columns = []
    dropped = {}
    for sid in SENSOR_IDS:
        s = series_set[sid]
        keep = np.isin(s.timestamps, common, assume_unique=True)
        dropped[sid] = int(len(s) - keep.sum())
        columns.append(s.values[keep])
    return MergeResult(Dataset(common, np.column_stack(columns)), dropped)


# --------------------------------------------------------------------------
# dataset csv

def format_label(label: Label) -> str:
    if label is None:
        return ""
    if not label:
        return "normal"
    return "anomalous:" + ";".join(label)


def parse_label(text: str, row: int = 0) -> Label:
    text = text.strip()
    if not text:
        return None
    if text == "normal":
        return ()
    if text.startswith("anomalous:"):
        ids = tuple(t for t in text[len("anomalous:"):].split(";") if t)
        if ids:
            return ids
    raise ParseError(f"row {row}: invalid label {text!r}")


def write_csv(dataset: Dataset, sink: Source) -> None:
    with _text_writer(sink) as fh:
        fh.write(",".join(DATASET_HEADER) + "\n")
        labels = dataset.labels
        for i in range(len(dataset)):
            cells = [format_timestamp(dataset.timestamps[i])]
            cells.extend(format_value(v) for v in dataset.values[i])
            cells.append(format_label(None if labels is None else labels[i]))
            fh.write(",".join(cells) + "\n")


def read_csv(source: Source) -> Dataset:
    """Read a dataset CSV written by :func:`write_csv`."""
    ts, rows, labels = [], [], []
    with _text_reader(source) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DATASET_HEADER:
            raise ParseError(f"row 1: expected header {','.join(DATASET_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DATASET_HEADER):
                raise ParseError(f"row {lineno}: expected {len(DATASET_HEADER)} columns, got {len(row)}")
            try:
                ts.append(parse_timestamp(row[0]))
            except ParseError as exc:
                raise ParseError(f"row {lineno}: {exc}") from None
            rows.append([_parse_value(c, lineno, name) for c, name in zip(row[1:6], CSV_COLUMNS)])
            labels.append(parse_label(row[6], lineno))
    if len(ts) > 1 and np.any(np.diff(ts) <= 0):
        raise DataError("dataset timestamps must be strictly increasing")
    return Dataset(np.array(ts, dtype=np.int64),
                   np.array(rows, dtype=np.float64).reshape(-1, len(FEATURES)),
                   tuple(labels))


def to_matrix(dataset: Dataset) -> tuple:
    """Feature matrix (copy) and its row keys."""
    return np.array(dataset.values), np.array(dataset.timestamps)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    datasets = [d for d in datasets if len(d)]
    if not datasets:
        return Dataset(np.empty(0, np.int64), np.empty((0, len(FEATURES))))
    labels = None
    if any(d.labels is not None for d in datasets):
        labels = tuple(lab for d in datasets
                       for lab in (d.labels if d.labels is not None else (None,) * len(d)))
    return Dataset(np.concatenate([d.timestamps for d in datasets]),
                   np.concatenate([d.values for d in datasets]), labels)
