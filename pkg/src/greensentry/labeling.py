"""Threshold rules for greenhouse anomalies, labeling, scrubbing and injection."""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DataError, ParseError
from .sensor_data import FEATURES, Dataset, _text_reader, _text_writer, format_timestamp

KINDS = ("below", "above", "abs_consecutive_diff_above")
CATEGORIES = ("natural", "potential")
PAIR_FEATURE = "temperature_pair"
INJECTION_KINDS = ("spike", "stuck", "drift")


@dataclass(frozen=True)
class AnomalyRule:
    rule_id: str
    feature: str
    kind: str
    threshold: float
    category: str

    def __post_init__(self):
        if not self.rule_id or "," in self.rule_id or ";" in self.rule_id:
            raise DataError(f"invalid rule id {self.rule_id!r}")
        if self.kind not in KINDS:
            raise DataError(f"rule {self.rule_id}: unknown kind {self.kind!r}")
        if self.kind == "abs_consecutive_diff_above":
            if self.feature != PAIR_FEATURE and self.feature not in FEATURES:
                raise DataError(f"rule {self.rule_id}: unknown feature {self.feature!r}")
        elif self.feature not in FEATURES:
            raise DataError(f"rule {self.rule_id}: unknown feature {self.feature!r}")
        if self.category not in CATEGORIES:
            raise DataError(f"rule {self.rule_id}: unknown category {self.category!r}")
        if not math.isfinite(self.threshold):
            raise DataError(f"rule {self.rule_id}: threshold must be finite")
        object.__setattr__(self, "threshold", float(self.threshold))

    @property
    def column(self) -> int:
        feature = "temperature" if self.feature == PAIR_FEATURE else self.feature
        return FEATURES.index(feature)

    def violated_by(self, value: float) -> bool:
        """Point check for the value-bound kinds."""
        if self.kind == "below":
            return value < self.threshold
        if self.kind == "above":
            return value > self.threshold
        raise ValueError("consecutive-difference rules need two values")


@dataclass(frozen=True)
class RuleSet:
    rules: tuple = field(default_factory=tuple)

    def __post_init__(self):
        rules = tuple(self.rules)
        ids = [r.rule_id for r in rules]
        dup = [k for k, v in Counter(ids).items() if v > 1]
        if dup:
            raise DataError(f"duplicate rule ids: {', '.join(dup)}")
        object.__setattr__(self, "rules", rules)

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)

    def __getitem__(self, rule_id: str) -> AnomalyRule:
        for r in self.rules:
            if r.rule_id == rule_id:
                return r
        raise KeyError(rule_id)

    def bounds_for(self, feature: str) -> list:
        return [r for r in self.rules if r.feature == feature and r.kind in ("below", "above")]

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# id,feature,kind,threshold,category\n")
        for r in self.rules:
            buf.write(f"{r.rule_id},{r.feature},{r.kind},{r.threshold!r},{r.category}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RuleSet":
        rules = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise ParseError(f"line {lineno}: expected id,feature,kind,threshold,category")
            try:
                threshold = float(parts[3])
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric threshold {parts[3]!r}") from None
            rules.append(AnomalyRule(parts[0], parts[1], parts[2], threshold, parts[4]))
        return cls(tuple(rules))

    @classmethod
    def load(cls, path) -> "RuleSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def default_ruleset() -> RuleSet:
    """The twelve greenhouse bounds: three natural anomalies, nine guardrails."""
    R = AnomalyRule
    return RuleSet((
        R("temp_low", "temperature", "below", 54.0, "natural"),
        R("temp_diff", PAIR_FEATURE, "abs_consecutive_diff_above", 25.0, "natural"),
        R("air_elevated", "air_quality", "above", 20.0, "natural"),
        R("moisture_low", "moisture", "below", 1300.0, "potential"),
        R("moisture_high", "moisture", "above", 1900.0, "potential"),
        R("light_high", "light", "above", 640.0, "potential"),
        R("light_low", "light", "below", 0.0, "potential"),
        R("air_high", "air_quality", "above", 40.0, "potential"),
        R("air_low", "air_quality", "below", 0.0, "potential"),
        R("temp_high", "temperature", "above", 150.0, "potential"),
        R("humidity_high", "humidity", "above", 90.0, "potential"),
        R("humidity_low", "humidity", "below", 0.0, "potential"),
    ))


# --------------------------------------------------------------------------
# labeling

class LabelReport(NamedTuple):
    fire_counts: dict  # rule id -> records flagged by that rule
    n_records: int
    n_anomalous: int

    def to_dict(self) -> dict:
        return {"n_records": self.n_records, "n_anomalous": self.n_anomalous,
                "fire_counts": dict(self.fire_counts)}


def rule_masks(dataset: Dataset, rules: RuleSet) -> dict:
    """Boolean firing mask per rule id."""
    values = dataset.values
    n = len(dataset)
    contiguous = np.zeros(n, dtype=bool)
    if n > 1:
        contiguous[1:] = np.diff(dataset.timestamps) == 1
    masks = {}
    for rule in rules:
        col = values[:, rule.column]
        if rule.kind == "below":
            mask = col < rule.threshold
        elif rule.kind == "above":
            mask = col > rule.threshold
        else:
            mask = np.zeros(n, dtype=bool)
            if n > 1:
                mask[1:] = np.abs(np.diff(col)) > rule.threshold
            mask &= contiguous
        masks[rule.rule_id] = mask
    return masks


def label(dataset: Dataset, rules: RuleSet = None):
    """Label every record; returns ``(labeled dataset, LabelReport)``.

    Any fired rule makes a record anomalous. Consecutive-difference rules
    compare a record with its predecessor in the same segment and flag the
    later record.
    """
    rules = default_ruleset() if rules is None else rules
    masks = rule_masks(dataset, rules)
    n = len(dataset)
    fired = [[] for _ in range(n)]
    for rule_id, mask in masks.items():
        for i in np.flatnonzero(mask):
            fired[i].append(rule_id)
    labels = tuple(tuple(f) for f in fired)
    counts = {rid: int(m.sum()) for rid, m in masks.items()}
    n_anom = sum(1 for f in fired if f)
    return dataset.with_labels(labels if n else ()), LabelReport(counts, n, n_anom)


def scrub(dataset: Dataset) -> Dataset:
    """Drop anomalous records; remaining gaps become segment breaks."""
    if not dataset.is_labeled:
        raise DataError("scrub requires a labeled dataset")
    anomalous = dataset.anomaly_mask()
    if len(dataset) and anomalous.all():
        raise DataError("no normal data to train on")
    if not anomalous.any():
        return dataset
    return dataset.take(~anomalous)


# --------------------------------------------------------------------------
# injection

@dataclass(frozen=True)
class InjectionSpec:
    """What to inject.

    ``count`` is the number of injection events. Event ``i`` targets
    ``target_features[i % len(target_features)]`` with kind
    ``kinds[(i // len(target_features)) % len(kinds)]``, so every feature is
    covered before any repeats. ``magnitude`` is the (low, high) overshoot
    past the rule bound as a fraction of the feature's observed range.
    """

    count: int
    kinds: tuple = ("spike",)
    target_features: tuple = FEATURES
    seed: int = 0
    magnitude: tuple = (0.10, 0.50)
    stuck_length: tuple = (5, 15)
    drift_length: tuple = (20, 60)

    def __post_init__(self):
        if self.count < 0:
            raise DataError("injection count must be >= 0")
        for k in self.kinds:
            if k not in INJECTION_KINDS:
                raise DataError(f"unknown injection kind {k!r}")
        for f in self.target_features:
            if f not in FEATURES:
                raise DataError(f"unknown feature {f!r}")
        if not self.kinds or not self.target_features:
            raise DataError("kinds and target_features must be non-empty")
        lo, hi = self.magnitude
        if not 0 < lo <= hi:
            raise DataError("magnitude must satisfy 0 < low <= high")


class InjectionEntry(NamedTuple):
    timestamp: int
    feature: str
    kind: str
    old_value: float
    new_value: float


class InjectionLog(list):
    """Sequence of :class:`InjectionEntry`, serializable as CSV."""

    HEADER = ("timestamp", "feature", "kind", "old_value", "new_value")

    def write_csv(self, sink) -> None:
        with _text_writer(sink) as fh:
            fh.write(",".join(self.HEADER) + "\n")
            for e in self:
                fh.write(f"{format_timestamp(e.timestamp)},{e.feature},{e.kind},"
                         f"{e.old_value!r},{e.new_value!r}\n")

    @classmethod
    def read_csv(cls, source) -> "InjectionLog":
        from .sensor_data import parse_timestamp

        log = cls()
        with _text_reader(source) as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                log.append(InjectionEntry(parse_timestamp(row["timestamp"]), row["feature"],
                                          row["kind"], float(row["old_value"]),
                                          float(row["new_value"])))
        return log


def _run_length(kind, spec, rng):
    if kind == "spike":
        return 1
    lo, hi = spec.stuck_length if kind == "stuck" else spec.drift_length
    return int(rng.integers(lo, hi + 1))


def inject(dataset: Dataset, spec: InjectionSpec, rules: RuleSet = None):
    """Overwrite values with out-of-band readings; returns ``(dataset, log)``.

    spike
        one record pushed past a rule bound.
    stuck
        a run of records frozen at one out-of-band value.
    drift
        a run ramping linearly away from a bound, starting just past it.

    Injected values are rounded to 6 decimals and always strictly violate
    the chosen bound. Runs never overlap each other. If the input carries
    labels, the output is relabeled with ``rules``.
    """
    rules = default_ruleset() if rules is None else rules
    n = len(dataset)
    if spec.count > n:
        raise DataError(f"injection count {spec.count} exceeds record count {n}")
    for f in spec.target_features:
        if not rules.bounds_for(f):
            raise DataError(f"no rule bounds feature {f!r}; cannot inject")
    log = InjectionLog()
    if spec.count == 0:
        return dataset, log

    rng = np.random.default_rng(spec.seed)
    values = np.array(dataset.values)
    used = np.zeros(n, dtype=bool)
    nf, nk = len(spec.target_features), len(spec.kinds)
    for i in range(spec.count):
        feature = spec.target_features[i % nf]
        kind = spec.kinds[(i // nf) % nk]
        col = FEATURES.index(feature)
        length = min(_run_length(kind, spec, rng), n)
        start = _free_start(used, length, rng)
        if start is None:
            raise DataError("not enough free records to place all injections")
        bounds = rules.bounds_for(feature)
        rule = bounds[int(rng.integers(len(bounds)))]
        observed = float(np.ptp(dataset.values[:, col])) or 1.0
        sign = -1.0 if rule.kind == "below" else 1.0
        lo, hi = spec.magnitude
        if kind == "spike" or kind == "stuck":
            over = rng.uniform(lo, hi) * observed
            new = np.full(length, rule.threshold + sign * over)
        else:
            far = rng.uniform(lo, hi) * observed
            near = min(0.01 * observed, far)
            new = rule.threshold + sign * np.linspace(near, far, length)
        new = _strictly_past(np.round(new, 6), rule)
        for j, v in zip(range(start, start + length), new):
            log.append(InjectionEntry(int(dataset.timestamps[j]), feature, kind,
                                      float(values[j, col]), float(v)))
            values[j, col] = v
        used[start:start + length] = True
    out = dataset.with_values(values)
    if dataset.is_labeled:
        out, _ = label(out.with_labels(None), rules)
    return out, log


def _strictly_past(new, rule):
    # rounding can land exactly on the bound
    step = 1e-6
    if rule.kind == "below":
        return np.where(new < rule.threshold, new, rule.threshold - step)
    return np.where(new > rule.threshold, new, rule.threshold + step)


def _free_start(used, length, rng):
    n = used.size
    # a run also needs one untouched neighbour on each side so runs do not merge
    padded = used.copy()
    padded[1:] |= used[:-1]
    padded[:-1] |= used[1:]
    window = np.convolve(padded.astype(int), np.ones(length, dtype=int), mode="valid")
    candidates = np.flatnonzero(window == 0)
    if candidates.size == 0:
        return None
    return int(candidates[rng.integers(candidates.size)])


def injected_mask(dataset: Dataset, log: Iterable[InjectionEntry], feature: str = None) -> np.ndarray:
    """Rows touched by the injection log (optionally one feature only)."""
    wanted = {e.timestamp for e in log if feature is None or e.feature == feature}
    return np.isin(dataset.timestamps, np.fromiter(wanted, dtype=np.int64, count=len(wanted)))


def label_counts(labels: Sequence) -> Counter:
    return Counter(rid for lab in labels if lab for rid in lab)
