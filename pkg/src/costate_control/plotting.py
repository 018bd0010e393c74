"""Minimal deterministic SVG line plots.

Hand-rolled on purpose: output bytes depend only on the data, so plot
artifacts can be diffed across runs.
"""

from __future__ import annotations

import numpy as np

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_WIDTH, _HEIGHT = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 30, 45  # margins


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s for s in (1 * mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    start = np.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * step:
        ticks.append(float(v))
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def emit_plot(
    series: list[tuple[str, np.ndarray, np.ndarray]],
    path,
    title: str = "",
    xlabel: str = "t",
    ylabel: str = "",
) -> None:
    """Write a fixed-viewbox SVG with one polyline per (label, x, y) series."""
    if not series:
        raise ValueError("no series to plot")
    for label, xs, ys in series:
        if len(np.ravel(xs)) == 0 or len(np.ravel(xs)) != len(np.ravel(ys)):
            raise ValueError(f"series {label!r} is empty or length-mismatched")
    all_x = np.concatenate([np.ravel(s[1]) for s in series])
    all_y = np.concatenate([np.ravel(s[2]) for s in series])
    x_lo, x_hi = float(np.min(all_x)), float(np.max(all_x))
    y_lo, y_hi = float(np.min(all_y)), float(np.max(all_y))
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    px = lambda x: _ML + (x - x_lo) / (x_hi - x_lo) * (_WIDTH - _ML - _MR)
    py = lambda y: _HEIGHT - _MB - (y - y_lo) / (y_hi - y_lo) * (_HEIGHT - _MT - _MB)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_WIDTH} {_HEIGHT}" '
        f'font-family="monospace" font-size="11">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
    ]
    # axes box
    out.append(
        f'<rect x="{_ML}" y="{_MT}" width="{_WIDTH - _ML - _MR}" '
        f'height="{_HEIGHT - _MT - _MB}" fill="none" stroke="black"/>'
    )
    for tv in _ticks(x_lo, x_hi):
        if x_lo <= tv <= x_hi:
            x = px(tv)
            out.append(f'<line x1="{x:.2f}" y1="{_HEIGHT - _MB}" x2="{x:.2f}" y2="{_HEIGHT - _MB + 5}" stroke="black"/>')
            out.append(f'<text x="{x:.2f}" y="{_HEIGHT - _MB + 18}" text-anchor="middle">{_fmt(tv)}</text>')
    for tv in _ticks(y_lo, y_hi):
        if y_lo <= tv <= y_hi:
            y = py(tv)
            out.append(f'<line x1="{_ML - 5}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="black"/>')
            out.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" text-anchor="end">{_fmt(tv)}</text>')
    if title:
        out.append(f'<text x="{_WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    out.append(f'<text x="{_WIDTH / 2:.0f}" y="{_HEIGHT - 8}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(
            f'<text x="15" y="{_HEIGHT / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 15 {_HEIGHT / 2:.0f})">{ylabel}</text>'
        )
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in zip(np.ravel(xs), np.ravel(ys)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 16 + 16 * i
        out.append(f'<line x1="{_ML + 10}" y1="{ly - 4}" x2="{_ML + 40}" y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_ML + 46}" y="{ly}">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
