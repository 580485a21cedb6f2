import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from initlab.convergence import (
    FilteredSeries,
    convergence_time,
    running_median,
    to_ctu,
    window_length,
    window_start,
)
from initlab.grid import FreestreamConditions


def naive_median(raw):
    out = []
    for i in range(len(raw)):
        w = max(1, math.ceil(2 * (i + 1) / 3))
        win = sorted(raw[i - w + 1 : i + 1])
        n = len(win)
        out.append(win[n // 2] if n % 2 else 0.5 * (win[n // 2 - 1] + win[n // 2]))
    return np.array(out)


def naive_tconv_index(filtered, tol, raw):
    final = filtered[-1]
    band = tol * np.abs(raw).max() if final == 0 else tol * abs(final)
    for j in range(len(filtered)):
        if all(abs(f - final) <= band * (1 + 1e-12) for f in filtered[j:]):
            return j
    raise AssertionError("unreachable: last sample is always in band")


def fs_of(filtered):
    filtered = np.asarray(filtered, dtype=float)
    t = np.arange(len(filtered), dtype=float)
    return FilteredSeries(t, filtered, filtered)


def test_window_length():
    assert [window_length(i) for i in range(6)] == [1, 2, 2, 3, 4, 4]
    for i in range(500):
        assert i + 1 - window_start(i) == window_length(i)


def test_running_median_examples():
    f = running_median([0.0, 1.0, 2.0], [1.0, 2.0, 3.0]).filtered
    assert f[2] == 2.5
    assert running_median([0.0], [5.0]).filtered.tolist() == [5.0]
    c = running_median(np.arange(50.0), np.full(50, 3.7)).filtered
    assert np.all(c == 3.7)


def test_running_median_errors():
    with pytest.raises(ValueError, match="empty"):
        running_median([], [])
    with pytest.raises(ValueError, match="increasing"):
        running_median([0.0, 0.0], [1.0, 2.0])


def test_convergence_examples():
    rep = convergence_time(fs_of([2.0, 1.5, 1.01, 0.995, 1.0]), 0.01)
    assert rep.index == 2 and rep.t_conv == 2.0
    rep = convergence_time(fs_of([1.02, 0.99, 1.0]), 0.01)
    assert rep.index == 1
    rep = convergence_time(fs_of([4.2] * 7), 0.01)
    assert rep.index == 0 and rep.t_conv == 0.0


def test_convergence_zero_final_uses_absolute_band():
    raw = np.array([10.0, -5.0, 0.05, -0.05, 0.0])
    rep = convergence_time(FilteredSeries(np.arange(5.0), raw, raw), 0.01)
    assert rep.absolute
    assert rep.index == 2


def test_oracle_equivalence_1000_random_series():
    rng = np.random.default_rng(20240501)
    for n in range(1000):
        length = int(rng.integers(1, 201))
        kind = n % 4
        if kind == 0:
            raw = rng.normal(size=length)
        elif kind == 1:
            # integer-valued data produces many ties
            raw = rng.integers(-3, 4, size=length).astype(float)
        elif kind == 2:
            t = np.arange(length)
            raw = 1.0 + np.exp(-t / 20.0) + 0.01 * rng.normal(size=length)
        else:
            raw = np.round(rng.normal(size=length), 1)
        times = np.cumsum(rng.uniform(0.1, 1.0, size=length))
        fs = running_median(times, raw)
        assert np.array_equal(fs.filtered, naive_median(raw))
        tol = float(rng.choice([0.0, 0.001, 0.01, 0.05, 0.2]))
        rep = convergence_time(fs, tol)
        assert rep.index == naive_tconv_index(fs.filtered, tol, raw)
        assert rep.t_conv == times[rep.index]


series = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=120)


@settings(max_examples=200, deadline=None)
@given(series)
def test_filtered_within_window_bounds(raw):
    raw = np.array(raw)
    f = running_median(np.arange(len(raw), dtype=float), raw).filtered
    assert len(f) == len(raw)
    for i in range(len(raw)):
        win = raw[window_start(i) : i + 1]
        assert win.min() <= f[i] <= win.max()


@settings(max_examples=100, deadline=None)
@given(series, st.sampled_from([2.0, 0.5, -1.0, 4.0, -0.25]))
def test_scale_equivariance(raw, c):
    # power-of-two factors keep the arithmetic exact
    raw = np.array(raw)
    t = np.arange(len(raw), dtype=float)
    assert np.array_equal(running_median(t, c * raw).filtered, c * running_median(t, raw).filtered)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=120), st.integers(-1000, 1000))
def test_shift_equivariance(raw, c):
    # integer data: shifts are exact in floating point
    raw = np.array(raw, dtype=float)
    t = np.arange(len(raw), dtype=float)
    assert np.array_equal(running_median(t, raw + c).filtered, running_median(t, raw).filtered + c)


@settings(max_examples=100, deadline=None)
@given(st.integers(5, 150), st.integers(0, 2**31 - 1), st.floats(1e3, 1e9))
def test_median_breakdown(n, seed, outlier):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, size=n)
    i = n - 1
    lo = window_start(i)
    w = i + 1 - lo
    n_bad = max(0, (w - 1) // 2 - 1)
    idx = rng.choice(np.arange(lo, i + 1), size=n_bad, replace=False) if n_bad else np.array([], dtype=int)
    clean = np.setdiff1d(np.arange(lo, i + 1), idx)
    bad = raw.copy()
    bad[idx] = outlier * rng.choice([-1.0, 1.0], size=len(idx))
    f = running_median(np.arange(n, dtype=float), bad).filtered[i]
    assert raw[clean].min() <= f <= raw[clean].max()


@settings(max_examples=100, deadline=None)
@given(series, st.floats(0, 0.5), st.floats(0, 0.5))
def test_tconv_monotone_in_tol(raw, t1, t2):
    tol1, tol2 = min(t1, t2), max(t1, t2)
    fs = running_median(np.arange(len(raw), dtype=float), np.array(raw))
    assert convergence_time(fs, tol1).t_conv >= convergence_time(fs, tol2).t_conv


@settings(max_examples=100, deadline=None)
@given(series, st.floats(0, 0.2))
def test_band_holds_after_tconv(raw, tol):
    fs = running_median(np.arange(len(raw), dtype=float), np.array(raw))
    rep = convergence_time(fs, tol)
    band = tol * abs(rep.final_value) if not rep.absolute else tol * np.abs(fs.raw).max()
    assert np.all(np.abs(fs.filtered[rep.index :] - rep.final_value) <= band * (1 + 1e-12))
    if rep.index > 0:
        assert abs(fs.filtered[rep.index - 1] - rep.final_value) > band * (1 + 1e-12)


def test_convergence_errors():
    with pytest.raises(ValueError):
        convergence_time(FilteredSeries(np.array([]), np.array([]), np.array([])), 0.01)
    with pytest.raises(ValueError):
        convergence_time(fs_of([1.0]), -0.1)


def test_ctu():
    fs = FreestreamConditions(u_inf=38.889, nu=1e-5, l0=2.88)
    assert to_ctu(2.0, fs) == pytest.approx(27.0, abs=0.05)
    assert to_ctu(0.0, fs) == 0.0
    fs2 = FreestreamConditions(u_inf=38.889, nu=1e-5, l0=5.76)
    assert to_ctu(2.0, fs2) == pytest.approx(to_ctu(2.0, fs) / 2, rel=1e-15)
    rep = convergence_time(fs_of([3.0, 1.0, 1.0]), 0.01, fs)
    assert rep.t_conv_ctu == pytest.approx(1.0 * 38.889 / 2.88)
