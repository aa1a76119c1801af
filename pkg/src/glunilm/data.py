"""Channel files, grid alignment, aggregate synthesis, scaling, rebalancing and a
synthetic household generator used in place of a real dataset.
"""
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError, MonotonicityError, ParseError

AGGREGATE_DIVISOR = 1000.0
SAMPLE_PERIOD = 3.0
DAY = 86400.0
REDD_EPOCH = 1303132929


@dataclass
class SeriesChannel:
    name: str
    timestamps: np.ndarray
    watts: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.watts = np.asarray(self.watts, dtype=np.float64)
        if self.timestamps.shape != self.watts.shape or self.timestamps.ndim != 1:
            raise DataError(
                f"{self.name}: timestamps {self.timestamps.shape} and watts "
                f"{self.watts.shape} must be 1-D and equally long"
            )
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            bad = int(np.flatnonzero(np.diff(self.timestamps) <= 0)[0]) + 1
            raise MonotonicityError(f"{self.name}: timestamps not strictly increasing at sample {bad}")
        if np.any(self.watts < 0) or not np.all(np.isfinite(self.watts)):
            raise DataError(f"{self.name}: watts must be finite and nonnegative")

    def __len__(self):
        return len(self.watts)


@dataclass(frozen=True)
class ApplianceSpec:
    name: str
    divisor: float
    on_threshold: float

    def __post_init__(self):
        if self.divisor <= 0:
            raise DataError(f"{self.name}: divisor must be > 0, got {self.divisor}")
        if self.on_threshold < 0:
            raise DataError(f"{self.name}: on_threshold must be >= 0, got {self.on_threshold}")


APPLIANCES = {
    "fridge": ApplianceSpec("fridge", 500.0, 50.0),
    "lighting": ApplianceSpec("lighting", 200.0, 20.0),
    "dishwasher": ApplianceSpec("dishwasher", 1400.0, 10.0),
}


def get_appliance(name):
    try:
        return APPLIANCES[name]
    except KeyError:
        raise DataError(f"unknown appliance {name!r}; known: {sorted(APPLIANCES)}") from None


def load_channel(path, name=None):
    """Parse a ``unix_timestamp watts`` per-line channel file."""
    path = Path(path)
    name = name or path.stem
    timestamps, watts = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise ParseError(path, lineno, f"expected 'timestamp watts', got {line.strip()!r}")
            try:
                t, w = float(fields[0]), float(fields[1])
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric field in {line.strip()!r}") from None
            if not (np.isfinite(t) and np.isfinite(w)):
                raise ParseError(path, lineno, "non-finite value")
            if w < 0:
                raise ParseError(path, lineno, f"negative power {w}")
            if timestamps and t <= timestamps[-1]:
                raise MonotonicityError(
                    f"{path}:{lineno}: timestamp {fields[0]} does not increase "
                    f"(previous {timestamps[-1]:.0f})"
                )
            timestamps.append(t)
            watts.append(w)
    if not timestamps:
        raise DataError(f"{path}: channel file is empty")
    return SeriesChannel(name, np.array(timestamps), np.array(watts))


def write_channel(channel, path):
    data = np.column_stack([channel.timestamps, channel.watts])
    np.savetxt(path, data, fmt=["%d", "%.3f"], delimiter=" ")


def write_series_csv(timestamps, watts, path):
    data = np.column_stack([timestamps, watts])
    np.savetxt(path, data, fmt=["%d", "%.6f"], delimiter=",", header="timestamp,watts", comments="")


def read_series_csv(path, name=None):
    """Read a ``timestamp,watts`` CSV (header required)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestamp", "watts"]:
            raise ParseError(path, 1, f"expected header 'timestamp,watts', got {header}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise ParseError(path, lineno, f"malformed row {row}") from None
    if not rows:
        raise DataError(f"{path}: no samples")
    arr = np.array(rows)
    return SeriesChannel(name or path.stem, arr[:, 0], np.maximum(arr[:, 1], 0.0))


def load_series(path, name=None):
    """Load either a channel file or a ``timestamp,watts`` CSV, by content."""
    with open(path) as fh:
        first = fh.readline().strip()
    if first.startswith("timestamp"):
        return read_series_csv(path, name)
    return load_channel(path, name)


def align_to_grid(channels, period=SAMPLE_PERIOD, max_gap=60.0, min_length=800):
    """Resample channels onto one uniform grid and split it at long outages.

    The grid starts at the latest first timestamp and ends at the earliest last
    timestamp. A grid point inside an inter-sample gap of at most ``max_gap``
    seconds takes the preceding value; longer gaps invalidate the grid points
    they contain. Returns a list of segments (each a ``{name: SeriesChannel}``
    dict), keeping only segments with at least ``min_length`` samples.
    """
    channels = list(channels)
    if not channels:
        raise DataError("no channels to align")
    names = [c.name for c in channels]
    if len(set(names)) != len(names):
        raise DataError(f"channel names must be unique, got {names}")
    start = max(c.timestamps[0] for c in channels)
    end = min(c.timestamps[-1] for c in channels)
    if start > end:
        raise DataError(f"channel time ranges do not intersect ({start:.0f} > {end:.0f})")
    grid = start + period * np.arange(int(np.floor((end - start) / period)) + 1)

    valid = np.ones(len(grid), dtype=bool)
    values = []
    for c in channels:
        idx = np.searchsorted(c.timestamps, grid, side="right") - 1
        exact = c.timestamps[idx] == grid
        nxt = np.minimum(idx + 1, len(c.timestamps) - 1)
        gap = c.timestamps[nxt] - c.timestamps[idx]
        valid &= exact | (gap <= max_gap)
        values.append(c.watts[idx])

    segments = []
    edges = np.diff(np.r_[0, valid.astype(np.int8), 0])
    for s, e in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        if e - s >= min_length:
            segments.append(
                {c.name: SeriesChannel(c.name, grid[s:e], v[s:e]) for c, v in zip(channels, values)}
            )
    return segments


def synthesize_aggregate(channels, name="aggregate"):
    """Pointwise sum of channels that share a grid."""
    channels = list(channels)
    if not channels:
        raise DataError("no channels to sum")
    ts = channels[0].timestamps
    for c in channels[1:]:
        if not np.array_equal(c.timestamps, ts):
            raise DataError(f"channel {c.name!r} is not on the same grid as {channels[0].name!r}")
    return SeriesChannel(name, ts.copy(), np.sum([c.watts for c in channels], axis=0))


def normalize(series, divisor):
    return np.asarray(series, dtype=np.float64) / divisor


def denormalize(series, divisor):
    return np.asarray(series, dtype=np.float64) * divisor


def is_on(pair, spec):
    return float(np.max(pair.y)) * spec.divisor > spec.on_threshold


def off_keep_probability(n_on, n_off, p_target):
    """Probability of keeping an off pair so the expected on share is ``p_target``."""
    if n_off == 0:
        return 1.0
    return min(1.0, n_on * (1.0 - p_target) / (p_target * n_off))


def rebalance_on_state(pairs, p_target, spec, seed=0):
    """Keep every on-state pair and a random share of off-state pairs.

    Order is preserved. A pair is on when its target window peaks above the
    appliance's on threshold (in watts).
    """
    if not 0.0 < p_target < 1.0:
        raise ValueError(f"p_target must lie in (0, 1), got {p_target}")
    on = np.array([is_on(p, spec) for p in pairs], dtype=bool)
    n_on = int(on.sum())
    if n_on == 0:
        raise DataError(f"no on-state windows for {spec.name}; cannot rebalance")
    q = off_keep_probability(n_on, len(pairs) - n_on, p_target)
    keep = on | (np.random.default_rng(seed).random(len(pairs)) < q)
    return [p for p, k in zip(pairs, keep) if k]


@dataclass
class SyntheticHousehold:
    channels: dict
    aggregate: SeriesChannel


def _fridge(rng, n, period):
    out = np.zeros(n)
    on_len, off_len = 15 * 60 / period, 30 * 60 / period
    i = int(rng.integers(0, int(on_len + off_len)))
    on = bool(rng.random() < 1 / 3)
    while i < n:
        base = on_len if on else off_len
        dur = max(1, int(round(base * rng.uniform(0.9, 1.1))))
        if on:
            seg = out[i:i + dur]
            seg[:] = 160.0 + rng.uniform(-10.0, 10.0, size=len(seg))
        i += dur
        on = not on
    return out


def _lighting(rng, n, period):
    out = np.zeros(n)
    levels = np.array([0.0, 40.0, 80.0, 120.0])
    i = 0
    while i < n:
        dur = int(round(rng.uniform(10, 120) * 60 / period))
        out[i:i + dur] = levels[rng.integers(len(levels))]
        i += dur
    return out


def _dishwasher(rng, n, period):
    out = np.zeros(n)
    phases = [(200.0, 10), (1200.0, 20), (200.0, 10)]
    mean_gap = 2 * 86400 / period
    t = rng.exponential(mean_gap)
    while t < n:
        i = int(t)
        for watts, minutes in phases:
            k = int(minutes * 60 / period)
            out[i:i + k] = watts
            i += k
        t += rng.exponential(mean_gap)
    return out


_GENERATORS = {"fridge": _fridge, "lighting": _lighting, "dishwasher": _dishwasher}


def synth_household(seed, duration, specs=("fridge", "lighting", "dishwasher"),
                    period=SAMPLE_PERIOD, noise_sigma=2.0, start=REDD_EPOCH):
    """Deterministic synthetic appliance traces and their noisy sum.

    ``duration`` is in seconds. Each appliance draws from its own child seed, so
    the trace of one appliance does not depend on which others are generated.
    """
    names = [s.name if isinstance(s, ApplianceSpec) else s for s in specs]
    unknown = [n for n in names if n not in _GENERATORS]
    if unknown:
        raise DataError(f"no synthetic generator for {unknown}; known: {sorted(_GENERATORS)}")
    n = int(duration // period)
    if n < 1:
        raise DataError(f"duration {duration} s shorter than one sample period")
    timestamps = start + period * np.arange(n)
    children = np.random.SeedSequence(seed).spawn(len(_GENERATORS) + 1)
    seeds = dict(zip(sorted(_GENERATORS), children))
    channels = {}
    for name in names:
        watts = _GENERATORS[name](np.random.default_rng(seeds[name]), n, period)
        channels[name] = SeriesChannel(name, timestamps, watts)
    noise_rng = np.random.default_rng(children[-1])
    total = np.sum([c.watts for c in channels.values()], axis=0) if channels else np.zeros(n)
    if noise_sigma > 0:
        total = np.maximum(total + noise_rng.normal(0.0, noise_sigma, n), 0.0)
    return SyntheticHousehold(channels, SeriesChannel("aggregate", timestamps, total))

