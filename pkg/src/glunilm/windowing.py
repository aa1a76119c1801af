"""Centered sliding windows and overlap-averaged reconstruction."""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigError, CoverageError, DataError


@dataclass
class WindowPair:
    """Input window ``x`` (length l_in) centered on target window ``y`` (length l_out).

    ``pos`` is the index of the first sample of ``y`` in the unpadded series.
    ``y`` is ``None`` for prediction-only windows.
    """

    x: np.ndarray
    y: np.ndarray
    pos: int


def pad_series(series, pad):
    """Replicate the first and last sample ``pad`` times on each side."""
    series = np.asarray(series, dtype=np.float64)
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return series.copy()
    return np.pad(series, pad, mode="edge")


def _check_geometry(m, l_in, l_out, step):
    if l_out < 1 or l_in < l_out or (l_in - l_out) % 2:
        raise ConfigError(f"need l_in >= l_out >= 1 with an even difference, got {l_in}, {l_out}")
    if step < 1 or l_out % step:
        raise ConfigError(f"step must be >= 1 and divide l_out={l_out}, got {step}")
    if m < l_out:
        raise DataError(f"series length {m} is shorter than l_out={l_out}")


def window_positions(m, l_out, step, cover_end=False):
    """Start indices ``0, step, 2*step, ...`` with ``pos + l_out <= m``.

    With ``cover_end`` a final window at ``m - l_out`` is appended when the
    regular grid stops short of the last sample.
    """
    positions = np.arange(0, m - l_out + 1, step)
    if cover_end and positions[-1] + l_out < m:
        positions = np.append(positions, m - l_out)
    return positions


def input_windows(aggregate, positions, l_in, l_out):
    """Read-only ``[len(positions), l_in]`` view-backed array of input windows."""
    padded = pad_series(aggregate, (l_in - l_out) // 2)
    return sliding_window_view(padded, l_in)[positions]


def make_windows(aggregate, target=None, l_in=800, l_out=100, step=5, cover_end=False):
    """Slice an aggregate series (and optionally its target) into window pairs."""
    aggregate = np.asarray(aggregate, dtype=np.float64)
    if aggregate.ndim != 1:
        raise DataError(f"aggregate must be 1-D, got shape {aggregate.shape}")
    m = len(aggregate)
    _check_geometry(m, l_in, l_out, step)
    if target is not None:
        target = np.asarray(target, dtype=np.float64)
        if target.shape != aggregate.shape:
            raise DataError(f"target shape {target.shape} != aggregate shape {aggregate.shape}")
    positions = window_positions(m, l_out, step, cover_end)
    xs = input_windows(aggregate, positions, l_in, l_out)
    return [
        WindowPair(
            np.array(xs[i]),
            None if target is None else target[pos:pos + l_out].copy(),
            int(pos),
        )
        for i, pos in enumerate(positions)
    ]


class OverlapAccumulator:
    """Running per-step mean and count of window predictions.

    The mean is updated incrementally (``mean += (x - mean) / count``) rather
    than as ``sum / count``, so steps whose predictions all agree reproduce that
    value bit for bit.
    """

    def __init__(self, m):
        self.means = np.zeros(m)
        self.counts = np.zeros(m, dtype=np.int64)

    @property
    def sums(self):
        return self.means * self.counts

    def add(self, pos, prediction):
        prediction = np.asarray(prediction, dtype=np.float64)
        end = pos + len(prediction)
        if pos < 0 or end > len(self.means):
            raise DataError(f"window [{pos}, {end}) falls outside series of length {len(self.means)}")
        self.counts[pos:end] += 1
        mean = self.means[pos:end]
        mean += (prediction - mean) / self.counts[pos:end]

    def add_batch(self, positions, predictions):
        for pos, pred in zip(positions, predictions):
            self.add(int(pos), pred)

    def merge(self, other):
        total = self.counts + other.counts
        weight = np.divide(other.counts, total, out=np.zeros(len(total)), where=total > 0)
        self.means += (other.means - self.means) * weight
        self.counts = total
        return self

    def gaps(self):
        """Half-open ``(start, end)`` ranges that received no prediction."""
        empty = np.flatnonzero(self.counts == 0)
        if len(empty) == 0:
            return []
        breaks = np.flatnonzero(np.diff(empty) > 1)
        starts = np.r_[empty[0], empty[breaks + 1]]
        ends = np.r_[empty[breaks], empty[-1]] + 1
        return list(zip(starts.tolist(), ends.tolist()))

    def result(self):
        gaps = self.gaps()
        if gaps:
            raise CoverageError(f"no window covers index ranges {gaps[:5]}")
        return self.means.copy()


def overlap_average(predictions, m):
    """Average overlapping ``(pos, window)`` predictions into a length-``m`` series."""
    acc = OverlapAccumulator(m)
    for pos, pred in predictions:
        acc.add(int(pos), pred)
    return acc.result()


def disaggregate(net, aggregate, aggregate_divisor=1000.0, appliance_divisor=1.0, step=5,
                 batch_size=256):
    """Estimate an appliance trace in watts from an aggregate trace in watts.

    Negative estimates are clamped to 0 W.
    """
    aggregate = np.asarray(aggregate, dtype=np.float64)
    if aggregate.ndim != 1:
        raise DataError(f"aggregate must be 1-D, got shape {aggregate.shape}")
    l_in, l_out = net.config.l_in, net.config.l_out
    m = len(aggregate)
    _check_geometry(m, l_in, l_out, step)
    positions = window_positions(m, l_out, step, cover_end=True)
    windows = input_windows(aggregate / aggregate_divisor, positions, l_in, l_out)
    acc = OverlapAccumulator(m)
    for start in range(0, len(positions), batch_size):
        chunk = slice(start, start + batch_size)
        acc.add_batch(positions[chunk], net.forward_batch(windows[chunk]))
    return np.maximum(acc.result() * appliance_divisor, 0.0)
