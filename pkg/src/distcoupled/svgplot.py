"""Minimal standalone SVG plots for experiment diagnostics.

No plotting dependency: the emitter lays out axes, ticks, and one
polyline (plus point markers) per data series inside a fixed viewport.
Output is well-formed XML and renders in any browser.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PLOT_KINDS = ("trajectory", "metric-vs-time", "ratio-vs-theta")

_WIDTH, _HEIGHT = 640, 480
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 36, 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

_DEFAULT_LABELS = {
    "trajectory": ("x (env units)", "y (env units)"),
    "metric-vs-time": ("t (s)", "metric"),
    "ratio-vs-theta": ("theta (rad)", "divergence ratio"),
}


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def emit_plot(series, kind: str, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Render data series as a standalone SVG document (returned as text).

    ``series`` is a list of ``(label, xs, ys)`` tuples; every series is
    drawn as a polyline, with point markers for single-point series and
    for the ``ratio-vs-theta`` kind.  Raises ValueError for an unknown
    kind or empty data.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if not series:
        raise ValueError("no data series to plot")
    cleaned = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=float).ravel()
        ys = np.asarray(ys, dtype=float).ravel()
        if xs.size == 0 or xs.size != ys.size:
            raise ValueError(f"series {label!r} must have matching, nonempty x/y data")
        cleaned.append((str(label), xs, ys))

    if not xlabel or not ylabel:
        dx, dy = _DEFAULT_LABELS[kind]
        xlabel = xlabel or dx
        ylabel = ylabel or dy

    all_x = np.concatenate([xs for _, xs, _ in cleaned])
    all_y = np.concatenate([ys for _, _, ys in cleaned])
    finite_x = all_x[np.isfinite(all_x)]
    finite_y = all_y[np.isfinite(all_y)]
    if finite_x.size == 0 or finite_y.size == 0:
        raise ValueError("no finite data to plot")

    def limits(v):
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            pad = max(1.0, abs(lo)) * 0.5
        else:
            pad = (hi - lo) * 0.05
        return lo - pad, hi + pad

    x_lo, x_hi = limits(finite_x)
    y_lo, y_hi = limits(finite_y)
    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def sx(v):
        return _MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v):
        return _MARGIN_T + (y_hi - v) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333333"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_WIDTH / 2:.1f}" y="{_MARGIN_T - 12}" text-anchor="middle" '
            f'font-size="14">{escape(title)}</text>'
        )

    for tick in np.linspace(x_lo, x_hi, 5):
        px = sx(tick)
        parts.append(
            f'<line x1="{px:.2f}" y1="{_MARGIN_T + plot_h}" x2="{px:.2f}" '
            f'y2="{_MARGIN_T + plot_h + 5}" stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{_MARGIN_T + plot_h + 18}" '
            f'text-anchor="middle">{escape(_fmt(tick))}</text>'
        )
    for tick in np.linspace(y_lo, y_hi, 5):
        py = sy(tick)
        parts.append(
            f'<line x1="{_MARGIN_L - 5}" y1="{py:.2f}" x2="{_MARGIN_L}" '
            f'y2="{py:.2f}" stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{py + 4:.2f}" '
            f'text-anchor="end">{escape(_fmt(tick))}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{_HEIGHT - 10}" '
        f'text-anchor="middle">{escape(xlabel)}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.1f})">{escape(ylabel)}</text>'
    )

    show_markers = kind == "ratio-vs-theta"
    for si, (label, xs, ys) in enumerate(cleaned):
        color = _COLORS[si % len(_COLORS)]
        ok = np.isfinite(xs) & np.isfinite(ys)
        pts = [(sx(x), sy(y)) for x, y in zip(xs[ok], ys[ok])]
        if len(pts) > 1:
            coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        if len(pts) == 1 or show_markers:
            for px, py in pts:
                parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5" fill="{color}"/>')
        if label:
            ly = _MARGIN_T + 14 + 14 * si
            lx = _MARGIN_L + plot_w - 120
            parts.append(
                f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            parts.append(f'<text x="{lx + 24}" y="{ly}">{escape(label)}</text>')

    parts.append("</svg>")
    return "\n".join(parts)
