"""Backward-looking running-median filter and forward-looking convergence time."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .grid import FreestreamConditions

DEFAULT_TOL = 0.01
BAND_SLACK = 1e-12


@dataclass(frozen=True)
class FilteredSeries:
    times: np.ndarray
    raw: np.ndarray
    filtered: np.ndarray


@dataclass(frozen=True)
class ConvergenceReport:
    t_conv: float
    t_conv_ctu: float | None
    final_value: float
    tol: float
    index: int
    absolute: bool = False  # band was absolute because the final value is zero

    @property
    def converged(self) -> bool:
        # the last sample is always inside its own band
        return True


def window_length(i: int) -> int:
    """Samples in the window ending at index ``i``: ceil(2/3 * (i + 1))."""
    return max(1, math.ceil(2 * (i + 1) / 3))


def window_start(i: int) -> int:
    # exact integer form of i + 1 - ceil(2(i+1)/3)
    return (i + 1) - (2 * (i + 1) + 2) // 3


def running_median(times, raw) -> FilteredSeries:
    """Median of the most recent two thirds of the samples seen so far.

    The window ending at sample ``i`` holds ``ceil(2/3 * (i + 1))`` samples.
    Its start index never decreases, so a pair of heaps with lazy deletion
    gives O(n log n) overall.
    """
    times = np.asarray(times, dtype=float)
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size == 0:
        raise ValueError("running_median: series is empty")
    if times.shape != raw.shape:
        raise ValueError("running_median: times and values differ in length")
    if raw.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("running_median: times must be strictly increasing")

    med = _SlidingMedian()
    out = np.empty_like(raw)
    start = 0
    for i, x in enumerate(raw):
        med.add(i, x)
        new_start = window_start(i)
        while start < new_start:
            med.remove(start, raw[start])
            start += 1
        out[i] = med.median()
    return FilteredSeries(times, raw, out)


class _SlidingMedian:
    """Two-heap median over a window whose edges only move forward."""

    def __init__(self):
        self._hq = heapq
        self.low: list[tuple[float, int]] = []  # max-heap via negated values
        self.high: list[tuple[float, int]] = []
        self.in_low: dict[int, bool] = {}
        self.dead: set[int] = set()
        self.n_low = 0
        self.n_high = 0

    def _prune(self, heap):
        while heap and heap[0][1] in self.dead:
            self.dead.discard(heap[0][1])
            self._hq.heappop(heap)

    def _low_top(self):
        self._prune(self.low)
        return -self.low[0][0]

    def _high_top(self):
        self._prune(self.high)
        return self.high[0][0]

    def add(self, i, x):
        hq = self._hq
        if self.n_low == 0 or x <= self._low_top():
            hq.heappush(self.low, (-x, i))
            self.in_low[i] = True
            self.n_low += 1
        else:
            hq.heappush(self.high, (x, i))
            self.in_low[i] = False
            self.n_high += 1
        self._rebalance()

    def remove(self, i, x):
        self.dead.add(i)
        if self.in_low.pop(i):
            self.n_low -= 1
        else:
            self.n_high -= 1
        self._prune(self.low)
        self._prune(self.high)
        self._rebalance()

    def _rebalance(self):
        hq = self._hq
        while self.n_low > self.n_high + 1:
            val, i = hq.heappop(self.low)
            self._prune(self.low)
            hq.heappush(self.high, (-val, i))
            self.in_low[i] = False
            self.n_low -= 1
            self.n_high += 1
            self._prune(self.low)
        while self.n_high > self.n_low:
            self._prune(self.high)
            val, i = hq.heappop(self.high)
            hq.heappush(self.low, (-val, i))
            self.in_low[i] = True
            self.n_high -= 1
            self.n_low += 1
            self._prune(self.high)

    def median(self):
        if self.n_low > self.n_high:
            return self._low_top()
        return 0.5 * (self._low_top() + self._high_top())


def convergence_time(
    fs: FilteredSeries,
    tol: float = DEFAULT_TOL,
    freestream: FreestreamConditions | None = None,
) -> ConvergenceReport:
    """First time after which the filtered series stays within ``tol`` of its last value.

    The band is relative, ``tol * |final|``; when the final value is exactly
    zero it falls back to ``tol * max|raw|``.
    """
    filt = np.asarray(fs.filtered, dtype=float)
    if filt.size == 0:
        raise ValueError("convergence_time: series is empty")
    if not tol >= 0:
        raise ValueError(f"convergence_time: tol must be non-negative, got {tol}")
    final = float(filt[-1])
    absolute = final == 0.0
    band = tol * float(np.abs(fs.raw).max()) if absolute else tol * abs(final)
    # closed band; the slack keeps decimal edge values such as 1.01 vs 1.0 inside
    outside = np.abs(filt - final) > band * (1.0 + BAND_SLACK)
    bad = np.flatnonzero(outside)
    j = int(bad[-1]) + 1 if bad.size else 0
    t_conv = float(fs.times[j])
    ctu = to_ctu(t_conv, freestream) if freestream is not None else None
    return ConvergenceReport(t_conv, ctu, final, tol, j, absolute)


def to_ctu(t: float, fs: FreestreamConditions) -> float:
    """Elapsed convective time units, t * U_inf / l0."""
    return t * fs.u_inf / fs.l0
