"""Self-contained SVG overlays of raw and filtered force histories."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .convergence import DEFAULT_TOL, FilteredSeries, convergence_time, running_median
from .io import list_series, read_series_csv

WARN_LOG = "plot_warnings.log"
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
W, H = 960, 540
LEFT, RIGHT, TOP, BOTTOM = 80, 200, 40, 60


class PlotError(RuntimeError):
    pass


def nice_ticks(lo: float, hi: float, n: int = 6) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)[: 2 * n]


def data_range(arrays) -> tuple[float, float]:
    """Closed interval holding every value, padded by 5% (or +-1 for flat data)."""
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    pad = 0.05 * (hi - lo) if hi > lo else max(1.0, abs(hi) * 0.05)
    return lo - pad, hi + pad


def _star(cx, cy, r=7.0):
    pts = []
    for i in range(10):
        rad = r if i % 2 == 0 else 0.45 * r
        ang = -math.pi / 2 + i * math.pi / 5
        pts.append(f"{cx + rad * math.cos(ang):.2f},{cy + rad * math.sin(ang):.2f}")
    return " ".join(pts)


def render_svg(curves, title: str, ylabel: str) -> str:
    """``curves``: list of (label, times, values, marker (t, y) or None)."""
    xlo = min(float(c[1][0]) for c in curves)
    xhi = max(float(c[1][-1]) for c in curves)
    if xhi <= xlo:
        xhi = xlo + 1.0
    ylo, yhi = data_range([c[2] for c in curves])
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - xlo) / (xhi - xlo) * pw

    def sy(y):
        return TOP + (yhi - y) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{LEFT + pw / 2}" y="{TOP - 14}" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in nice_ticks(xlo, xhi):
        if xlo <= t <= xhi:
            out.append(f'<line x1="{sx(t):.2f}" y1="{TOP + ph}" x2="{sx(t):.2f}" y2="{TOP + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{sx(t):.2f}" y="{TOP + ph + 20}" text-anchor="middle" font-family="sans-serif" font-size="12">{t:g}</text>')
    for t in nice_ticks(ylo, yhi):
        if ylo <= t <= yhi:
            out.append(f'<line x1="{LEFT - 5}" y1="{sy(t):.2f}" x2="{LEFT}" y2="{sy(t):.2f}" stroke="black"/>')
            out.append(f'<text x="{LEFT - 8}" y="{sy(t) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="12">{t:g}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" font-size="13">time (s)</text>')
    out.append(
        f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {TOP + ph / 2})">{escape(ylabel)}</text>'
    )
    for n, (label, times, values, marker) in enumerate(curves):
        color = COLORS[n % len(COLORS)]
        pts = " ".join(f"{sx(t):.2f},{sy(y):.2f}" for t, y in zip(times, values))
        out.append(f'<polyline class="series" data-label="{escape(label)}" fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        if marker is not None:
            out.append(f'<polygon class="tconv" fill="{color}" stroke="black" stroke-width="0.6" points="{_star(sx(marker[0]), sy(marker[1]))}"/>')
        ly = TOP + 10 + 20 * n
        out.append(f'<line x1="{W - RIGHT + 15}" y1="{ly}" x2="{W - RIGHT + 40}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 46}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _expected_strategies(root: Path) -> list[str]:
    table = root / "table.csv"
    if not table.is_file():
        return []
    with open(table, newline="") as fh:
        return [rec["strategy"] for rec in csv.DictReader(fh)]


def emit_plots(output_dir, tol: float = DEFAULT_TOL) -> list[Path]:
    """Write ``force_raw.svg`` and ``force_filtered.svg`` under ``output_dir``.

    Strategies named in the table but lacking a series are skipped and listed
    in ``plot_warnings.log``.
    """
    root = Path(output_dir)
    found = list_series(root)
    warnings = []
    for name in _expected_strategies(root):
        if name not in found:
            warnings.append(f"missing series for strategy {name}; skipped")
    raw_curves, filt_curves = [], []
    for name, path in found.items():
        try:
            series, filtered = read_series_csv(path)
        except (OSError, ValueError) as exc:
            warnings.append(f"unreadable series for strategy {name}: {exc}; skipped")
            continue
        if len(series) == 0:
            warnings.append(f"empty series for strategy {name}; skipped")
            continue
        if filtered is None:
            filtered = running_median(series.times, series.fx).filtered
        rep = convergence_time(FilteredSeries(series.times, series.fx, filtered), tol)
        marker = (rep.t_conv, float(filtered[rep.index]))
        raw_curves.append((name, series.times, series.fx, marker))
        filt_curves.append((name, series.times, filtered, marker))
    log = root / WARN_LOG
    if warnings:
        log.write_text("\n".join(warnings) + "\n")
    elif log.exists():
        log.unlink()
    if not raw_curves:
        raise PlotError(f"no series found in {root}")
    paths = [root / "force_raw.svg", root / "force_filtered.svg"]
    paths[0].write_text(render_svg(raw_curves, "Drag force, raw", "drag (N/m)"))
    paths[1].write_text(render_svg(filt_curves, "Drag force, running median", "filtered drag (N/m)"))
    return paths
