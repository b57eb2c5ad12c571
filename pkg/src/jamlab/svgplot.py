"""Minimal standalone SVG renderers for surfaces and line plots.

Writes self-contained vector files (no plotting dependency): a colored
cell grid for (window, hidden dim) -> MAE surfaces and polyline charts
for split-ratio curves.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ContractError

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 110, 45, 55
_CELL = 42


def _color(frac):
    """0 -> deep blue, 0.5 -> pale yellow, 1 -> dark red."""
    frac = min(max(frac, 0.0), 1.0)
    if frac < 0.5:
        t = frac / 0.5
        r, g, b = int(40 + t * 215), int(60 + t * 195), int(160 - t * 40)
    else:
        t = (frac - 0.5) / 0.5
        r, g, b = 255 - int(t * 80), int(255 - t * 215), int(120 - t * 100)
    return f"rgb({r},{g},{b})"


def _text(x, y, s, size=12, anchor="middle", rotate=None):
    extra = f' transform="rotate({rotate} {x} {y})"' if rotate is not None else ""
    return (f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}"{extra}>'
            f"{escape(str(s))}</text>")


def emit_surface_svg(cells, path, title, xlabel="window (s)",
                     ylabel="hidden dim", value_label="MAE (cm)"):
    """cells: iterable of (x_value, y_value, value); one rect per cell."""
    cells = list(cells)
    if not cells:
        raise ContractError("emit_surface_svg: empty surface")
    xs = sorted({c[0] for c in cells})
    ys = sorted({c[1] for c in cells})
    lookup = {(x, y): v for x, y, v in cells}
    vmin = min(v for _, _, v in cells)
    vmax = max(v for _, _, v in cells)
    span = (vmax - vmin) or 1.0

    width = _MARGIN_L + _CELL * len(xs) + _MARGIN_R
    height = _MARGIN_T + _CELL * len(ys) + _MARGIN_B
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             _text(width / 2, 20, title, size=14)]

    for yi, y in enumerate(ys):
        for xi, x in enumerate(xs):
            v = lookup.get((x, y))
            if v is None:
                continue
            px = _MARGIN_L + xi * _CELL
            py = _MARGIN_T + (len(ys) - 1 - yi) * _CELL
            parts.append(
                f'<rect x="{px}" y="{py}" width="{_CELL}" height="{_CELL}" '
                f'fill="{_color((v - vmin) / span)}" stroke="white"/>')
            parts.append(_text(px + _CELL / 2, py + _CELL / 2 + 4,
                               f"{v:.2f}", size=9))

    for xi, x in enumerate(xs):
        parts.append(_text(_MARGIN_L + xi * _CELL + _CELL / 2,
                           _MARGIN_T + len(ys) * _CELL + 16, x, size=10))
    for yi, y in enumerate(ys):
        parts.append(_text(_MARGIN_L - 8,
                           _MARGIN_T + (len(ys) - 1 - yi) * _CELL + _CELL / 2 + 4,
                           y, size=10, anchor="end"))
    parts.append(_text(_MARGIN_L + len(xs) * _CELL / 2,
                       _MARGIN_T + len(ys) * _CELL + 40, xlabel))
    parts.append(_text(18, _MARGIN_T + len(ys) * _CELL / 2, ylabel,
                       rotate=-90))

    # color scale
    bar_x = _MARGIN_L + len(xs) * _CELL + 25
    bar_h = len(ys) * _CELL
    steps = 24
    for i in range(steps):
        frac = 1.0 - i / (steps - 1)
        parts.append(f'<rect x="{bar_x}" y="{_MARGIN_T + i * bar_h / steps:.1f}" '
                     f'width="16" height="{bar_h / steps + 0.5:.1f}" '
                     f'fill="{_color(frac)}"/>')
    parts.append(_text(bar_x + 24, _MARGIN_T + 10, f"{vmax:.2f}", size=9,
                       anchor="start"))
    parts.append(_text(bar_x + 24, _MARGIN_T + bar_h, f"{vmin:.2f}", size=9,
                       anchor="start"))
    parts.append(_text(bar_x + 8, _MARGIN_T - 8, value_label, size=9))

    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="ascii", newline="\n")


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_lines_svg(curves, path, title, xlabel, ylabel, width=560, height=380):
    """curves: mapping label -> [(x, y), ...]; one polyline per label."""
    if not curves or all(not pts for pts in curves.values()):
        raise ContractError("emit_lines_svg: no curves to draw")
    all_pts = [p for pts in curves.values() for p in pts]
    xmin = min(p[0] for p in all_pts)
    xmax = max(p[0] for p in all_pts)
    ymin = 0.0
    ymax = max(p[1] for p in all_pts) * 1.05 or 1.0
    xspan = (xmax - xmin) or 1.0

    plot_w = width - _MARGIN_L - 30
    plot_h = height - _MARGIN_T - _MARGIN_B

    def sx(x):
        return _MARGIN_L + (x - xmin) / xspan * plot_w

    def sy(y):
        return _MARGIN_T + plot_h - (y - ymin) / (ymax - ymin) * plot_h

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             _text(width / 2, 20, title, size=14),
             f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" '
             f'height="{plot_h}" fill="none" stroke="black"/>']

    for i in range(5):
        yv = ymin + (ymax - ymin) * i / 4
        parts.append(f'<line x1="{_MARGIN_L}" y1="{sy(yv):.1f}" '
                     f'x2="{_MARGIN_L + plot_w}" y2="{sy(yv):.1f}" '
                     f'stroke="#dddddd"/>')
        parts.append(_text(_MARGIN_L - 6, sy(yv) + 4, f"{yv:.1f}", size=9,
                           anchor="end"))
    for x in sorted({p[0] for p in all_pts}):
        parts.append(_text(sx(x), _MARGIN_T + plot_h + 14, f"{x:g}", size=9))

    for i, (label, pts) in enumerate(sorted(curves.items())):
        if not pts:
            continue
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" '
                         f'fill="{color}"/>')
        ly = _MARGIN_T + 14 + i * 16
        parts.append(f'<line x1="{_MARGIN_L + plot_w - 95}" y1="{ly - 4}" '
                     f'x2="{_MARGIN_L + plot_w - 75}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(_text(_MARGIN_L + plot_w - 70, ly, label, size=10,
                           anchor="start"))

    parts.append(_text(_MARGIN_L + plot_w / 2, height - 14, xlabel))
    parts.append(_text(18, _MARGIN_T + plot_h / 2, ylabel, rotate=-90))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="ascii", newline="\n")
