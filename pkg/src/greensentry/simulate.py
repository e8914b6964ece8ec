"""Deterministic synthetic greenhouse telemetry.

Random numbers come from numpy's ``PCG64`` bit generator
(``numpy.random.default_rng(seed)``), drawn in this fixed order:

1. per-day parameters (light peak, day/night temperature, air baseline,
   irrigation peaks),
2. per-minute noise for each feature in ``FEATURES`` order,
3. slow weather drift for temperature, then air quality,
4. events, day by day, in the order cold_snap, pollution_spike,
   sensor_freeze,
5. dropouts, day by day.

Noise is Gaussian with the configured scale, truncated at 3 standard
deviations. Weather drift is a unit-variance AR(1) process with a
two-hour correlation time, also truncated (at 2). Temperature and humidity are held for 10-minute blocks, the
cadence of the standalone temperature/humidity logger. All values are
rounded to 6 decimals so a CSV round trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError, ParseError
from .labeling import InjectionLog, InjectionSpec, inject, label, scrub
from .sensor_data import FEATURES, Dataset, format_timestamp, parse_timestamp

MINUTES_PER_DAY = 1440
EVENTS = ("cold_snap", "pollution_spike", "sensor_freeze")
DEFAULT_NOISE = {"moisture": 4.0, "light": 3.0, "air_quality": 0.6,
                 "temperature": 0.3, "humidity": 0.8}
REFERENCE_START = parse_timestamp("2021-04-01T00:00:00Z")

SUNRISE, SUNSET = 390, 1170
MOISTURE_FLOOR = 1330.0
MOISTURE_TAU = 500.0
IRRIGATION_RISE = 5
ORIA_BLOCK = 10
WEATHER_TAU = 120.0
TEMP_DRIFT = 2.5
AIR_DRIFT = 1.0


@dataclass(frozen=True)
class SimConfig:
    start: int = REFERENCE_START
    days: int = 13
    seed: int = 7
    irrigation_times: tuple = (360, 1080)
    noise_scale: dict = field(default_factory=lambda: dict(DEFAULT_NOISE))
    event_probabilities: dict = field(default_factory=lambda: {e: 0.0 for e in EVENTS})
    event_days: Optional[tuple] = None  # [first, last) day range where events may start
    dropout_probability: float = 0.0  # per day; a dropout removes 5-60 minutes

    def __post_init__(self):
        if self.days < 1:
            raise DataError("days must be >= 1")
        noise = {f: float(self.noise_scale.get(f, 0.0)) for f in FEATURES}
        unknown = set(self.noise_scale) - set(FEATURES)
        if unknown:
            raise DataError(f"unknown noise features: {sorted(unknown)}")
        if any(v < 0 for v in noise.values()):
            raise DataError("noise_scale must be >= 0")
        probs = {e: float(self.event_probabilities.get(e, 0.0)) for e in EVENTS}
        unknown = set(self.event_probabilities) - set(EVENTS)
        if unknown:
            raise DataError(f"unknown events: {sorted(unknown)}")
        if any(not 0.0 <= p <= 1.0 for p in list(probs.values()) + [self.dropout_probability]):
            raise DataError("probabilities must lie in [0, 1]")
        for t in self.irrigation_times:
            if not 0 <= t < MINUTES_PER_DAY:
                raise DataError(f"irrigation time {t} outside 0..1439")
        object.__setattr__(self, "noise_scale", noise)
        object.__setattr__(self, "event_probabilities", probs)
        object.__setattr__(self, "irrigation_times", tuple(sorted(int(t) for t in self.irrigation_times)))
        if self.event_days is not None:
            object.__setattr__(self, "event_days", tuple(int(d) for d in self.event_days))

    def to_text(self) -> str:
        lines = [
            f"start={format_timestamp(self.start)}",
            f"days={self.days}",
            f"seed={self.seed}",
            "irrigation_times=" + ",".join(str(t) for t in self.irrigation_times),
        ]
        lines += [f"noise.{f}={self.noise_scale[f]!r}" for f in FEATURES]
        lines += [f"event.{e}={self.event_probabilities[e]!r}" for e in EVENTS]
        if self.event_days is not None:
            lines.append("event_days=" + ",".join(str(d) for d in self.event_days))
        lines.append(f"dropout_probability={self.dropout_probability!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SimConfig":
        return cls.from_mapping(parse_key_values(text))

    @classmethod
    def from_mapping(cls, kv: dict) -> "SimConfig":
        """Build from ``key=value`` strings; unrelated keys are ignored."""
        kw = {}
        noise = dict(DEFAULT_NOISE)
        events = {e: 0.0 for e in EVENTS}
        try:
            for key, value in kv.items():
                if key == "start":
                    kw["start"] = parse_timestamp(value)
                elif key in ("days", "seed"):
                    kw[key] = int(value)
                elif key == "irrigation_times":
                    kw[key] = tuple(int(v) for v in value.split(",") if v.strip())
                elif key == "event_days":
                    kw[key] = tuple(int(v) for v in value.split(","))
                elif key == "dropout_probability":
                    kw[key] = float(value)
                elif key.startswith("noise."):
                    noise[key[len("noise."):]] = float(value)
                elif key.startswith("event."):
                    events[key[len("event."):]] = float(value)
        except ValueError as exc:
            raise ParseError(f"bad simulation config value: {exc}") from None
        return cls(noise_scale=noise, event_probabilities=events, **kw)


def parse_key_values(text: str) -> dict:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        kv[key.strip()] = value.strip()
    return kv


def _truncated_noise(rng, scale, n):
    z = np.clip(rng.standard_normal(n), -3.0, 3.0)
    return z * scale


def _weather(rng, n):
    phi = np.exp(-1.0 / WEATHER_TAU)
    eps = rng.standard_normal(n) * np.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    acc = rng.standard_normal()
    for i in range(n):
        acc = phi * acc + eps[i]
        out[i] = acc
    return np.clip(out, -2.0, 2.0)


def _smooth_daily(values, t_days):
    centers = np.arange(values.size) + 0.5
    return np.interp(t_days, centers, values)


def _hold_blocks(x, block):
    idx = np.arange(x.size)
    return x[idx - idx % block]


def _ramp_profile(n_total, start, down, hold, up):
    """Weight 0 -> 1 -> 0 over a trapezoid starting at ``start``."""
    w = np.zeros(n_total)
    t = np.arange(n_total) - start
    rising = (t >= 0) & (t < down)
    w[rising] = (t[rising] + 1) / down
    w[(t >= down) & (t < down + hold)] = 1.0
    falling = (t >= down + hold) & (t < down + hold + up)
    w[falling] = 1.0 - (t[falling] - down - hold + 1) / (up + 1)
    return w


def _moisture_curve(cfg, peaks, n):
    t = np.arange(n, dtype=float)
    times = [d * MINUTES_PER_DAY + it for d in range(cfg.days) for it in cfg.irrigation_times]
    moisture = np.empty(n)
    # before the first irrigation of the run: decaying from a peak one cycle earlier
    prev_t = (times[0] - MINUTES_PER_DAY // max(1, len(cfg.irrigation_times))) if times else -720.0
    prev_peak = peaks[-1] if len(peaks) else 1860.0
    boundaries = [t for t in times if t < n] + [n]
    cursor = 0
    for k, nxt in enumerate(boundaries):
        seg = slice(cursor, nxt)
        moisture[seg] = MOISTURE_FLOOR + (prev_peak - MOISTURE_FLOOR) * np.exp(-(t[seg] - prev_t) / MOISTURE_TAU)
        if nxt >= n:
            break
        before = MOISTURE_FLOOR + (prev_peak - MOISTURE_FLOOR) * np.exp(-(nxt - prev_t) / MOISTURE_TAU)
        peak = peaks[k % len(peaks)]
        rise_end = min(nxt + IRRIGATION_RISE, n)
        steps = np.arange(1, rise_end - nxt + 1)
        moisture[nxt:rise_end] = before + (peak - before) * steps / IRRIGATION_RISE
        prev_t, prev_peak = nxt + IRRIGATION_RISE - 1, peak
        cursor = rise_end
    return moisture


class SimEvent(NamedTuple):
    kind: str
    start: int  # row index
    length: int
    feature: str


def simulate(config: SimConfig, return_events: bool = False):
    """One record per minute for ``config.days`` days (minus dropouts)."""
    cfg = config
    n = cfg.days * MINUTES_PER_DAY
    rng = np.random.default_rng(cfg.seed)

    # 1. per-day parameters
    light_peak = 600.0 * rng.uniform(0.85, 1.0, cfg.days)
    temp_peak = rng.uniform(89.0, 95.0, cfg.days)
    temp_night = rng.uniform(63.0, 70.0, cfg.days)
    air_base = rng.uniform(8.5, 12.0, cfg.days)
    irrigation_peaks = rng.uniform(1840.0, 1875.0, max(1, cfg.days * len(cfg.irrigation_times)))

    # 2. noise
    noise = {f: _truncated_noise(rng, cfg.noise_scale[f], n) for f in FEATURES}

    # 3. weather drift, scaled with the temperature / air noise so a
    # noiseless run stays on the smooth curves
    temp_drift = TEMP_DRIFT * _weather(rng, n) * (cfg.noise_scale["temperature"] > 0)
    air_drift = AIR_DRIFT * _weather(rng, n) * (cfg.noise_scale["air_quality"] > 0)

    minute = np.arange(n)
    mod = minute % MINUTES_PER_DAY
    t_days = minute / MINUTES_PER_DAY
    day = minute // MINUTES_PER_DAY

    daylight = np.where((mod >= SUNRISE) & (mod <= SUNSET),
                        np.sin(np.pi * (mod - SUNRISE) / (SUNSET - SUNRISE)), 0.0)
    light = np.clip(2.0 + light_peak[day] * daylight + noise["light"], 0.0, 640.0)

    warm = np.where((mod >= 360) & (mod <= 1260),
                    np.sin(np.pi * (mod - 360) / 900.0).clip(0.0) ** 0.6, 0.0)
    night = _smooth_daily(temp_night, t_days)
    peak = _smooth_daily(temp_peak, t_days)
    temperature = night + (peak - night) * warm + temp_drift

    air = _smooth_daily(air_base, t_days) + 1.5 * np.sin(2 * np.pi * (mod - 480) / MINUTES_PER_DAY)
    air = air + air_drift + noise["air_quality"]

    moisture = _moisture_curve(cfg, irrigation_peaks, n) + noise["moisture"]

    # 4. events
    events = []
    first, last = cfg.event_days if cfg.event_days is not None else (0, cfg.days)
    p = cfg.event_probabilities
    for d in range(cfg.days):
        eligible = first <= d < last
        for kind in EVENTS:
            fires = rng.uniform() < p[kind]
            start = d * MINUTES_PER_DAY + int(rng.integers(0, MINUTES_PER_DAY))
            if kind == "cold_snap":
                down, hold, up = 30, int(rng.integers(10, 41)), 30
                floor = rng.uniform(38.0, 46.0)
                if fires and eligible:
                    w = _ramp_profile(n, start, down, hold, up)
                    temperature = temperature - (temperature - floor) * w
                    events.append(SimEvent(kind, start, min(down + hold + up, n - start), "temperature"))
            elif kind == "pollution_spike":
                down, hold, up = 3, int(rng.integers(10, 31)), 10
                level = rng.uniform(28.0, 60.0)
                if fires and eligible:
                    w = _ramp_profile(n, start, down, hold, up)
                    air = air + (level - air) * w
                    events.append(SimEvent(kind, start, min(down + hold + up, n - start), "air_quality"))
            else:
                length = int(rng.integers(30, 121))
                target = ("moisture", "light", "air_quality")[int(rng.integers(0, 3))]
                if fires and eligible:
                    events.append(SimEvent(kind, start, min(length, n - start), target))

    temperature = _hold_blocks(temperature + noise["temperature"], ORIA_BLOCK)
    humidity = 85.0 - (temperature - 60.0) * (55.0 / 36.0)
    humidity = _hold_blocks(np.clip(humidity + noise["humidity"], 20.0, 88.0), ORIA_BLOCK)
    values = np.column_stack([
        np.clip(moisture, 1050.0, 2050.0),
        light,
        np.clip(air, 0.0, 120.0),
        np.clip(temperature, 30.0, 150.0),
        humidity,
    ])
    for ev in events:
        if ev.kind == "sensor_freeze":
            col = FEATURES.index(ev.feature)
            values[ev.start:ev.start + ev.length, col] = values[ev.start, col]
    values = np.round(values, 6)

    # 5. dropouts
    keep = np.ones(n, dtype=bool)
    for d in range(cfg.days):
        fires = rng.uniform() < cfg.dropout_probability
        start = d * MINUTES_PER_DAY + int(rng.integers(0, MINUTES_PER_DAY))
        length = int(rng.integers(5, 61))
        if fires:
            keep[start:start + length] = False

    ds = Dataset(cfg.start + minute[keep], values[keep])
    return (ds, events) if return_events else ds


# --------------------------------------------------------------------------
# reference scenario

REFERENCE_TEST_DAYS = 3


def reference_config(seed: int = 7) -> SimConfig:
    return SimConfig(
        start=REFERENCE_START,
        days=13,
        seed=seed,
        event_probabilities={"cold_snap": 1.0, "pollution_spike": 1.0, "sensor_freeze": 0.0},
        event_days=(11, 12),
        dropout_probability=0.25,
    )


def reference_injections(seed: int = 7) -> list:
    return [
        InjectionSpec(count=20, kinds=("spike",), seed=seed + 1),
        InjectionSpec(count=2, kinds=("stuck", "drift"), target_features=("air_quality",),
                      seed=seed + 2, drift_length=(20, 30)),
    ]


class Scenario(NamedTuple):
    train: Dataset
    test: Dataset
    injection_log: InjectionLog
    config: SimConfig


def build_reference_scenario(seed: int = 7) -> Scenario:
    """13 simulated days; the last 3 hold every event and injection."""
    cfg = reference_config(seed)
    data = simulate(cfg)
    split_at = cfg.start + (cfg.days - REFERENCE_TEST_DAYS) * MINUTES_PER_DAY
    before = data.take(data.timestamps < split_at)
    after = data.take(data.timestamps >= split_at)
    labeled, _ = label(before)
    train = scrub(labeled)
    test, _ = label(after)
    log = InjectionLog()
    for spec in reference_injections(seed):
        test, part = inject(test, spec)
        log.extend(part)
    return Scenario(train, test, log, cfg)


def reference_scenario(seed: int = 7) -> tuple:
    """``(train, test)`` for the fixed-seed reference run."""
    sc = build_reference_scenario(seed)
    return sc.train, sc.test
