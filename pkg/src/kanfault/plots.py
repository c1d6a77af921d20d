"""Minimal static SVG charts: bars, annotated heatmaps and pies.

Output is plain markup with fixed float formatting, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
           "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd"]


def _f(v: float) -> str:
    return f"{v:.2f}"


def _doc(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def _text(x, y, s, anchor="middle", extra=""):
    return f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>'


def bar_chart(labels, values, title="", width=640, bar_height=22) -> str:
    """Horizontal bars, one per label, longest scaled to the plot width."""
    values = np.asarray(values, dtype=float)
    left, right, top = 160, 60, 40
    height = top + bar_height * max(len(values), 1) + 20
    peak = float(values.max()) if values.size and values.max() > 0 else 1.0
    span = width - left - right
    body = [_text(width / 2, 20, title, extra=' font-weight="bold"')]
    for i, (lab, v) in enumerate(zip(labels, values)):
        y = top + i * bar_height
        w = max(v, 0.0) / peak * span
        body.append(_text(left - 6, y + bar_height * 0.65, lab, anchor="end"))
        body.append(
            f'<rect x="{left}" y="{_f(y + 2)}" width="{_f(w)}" height="{_f(bar_height - 4)}" '
            f'fill="{PALETTE[0]}"/>'
        )
        body.append(_text(left + w + 4, y + bar_height * 0.65, f"{v:.4f}", anchor="start"))
    return _doc(width, height, body)


def heatmap(matrix, row_labels, col_labels, title="", cell=56) -> str:
    """Count matrix with per-cell annotations; darker means larger."""
    m = np.asarray(matrix, dtype=float)
    left, top = 110, 60
    width = left + cell * m.shape[1] + 20
    height = top + cell * m.shape[0] + 40
    peak = float(m.max()) if m.size and m.max() > 0 else 1.0
    body = [_text(width / 2, 20, title, extra=' font-weight="bold"')]
    for j, lab in enumerate(col_labels):
        body.append(_text(left + (j + 0.5) * cell, top - 8, lab))
    for i, lab in enumerate(row_labels):
        y = top + i * cell
        body.append(_text(left - 8, y + cell / 2 + 4, lab, anchor="end"))
        for j in range(m.shape[1]):
            shade = m[i, j] / peak
            level = int(round(255 - 180 * shade))
            fill = f"#{level:02x}{level:02x}ff"
            ink = "#ffffff" if shade > 0.6 else "#000000"
            x = left + j * cell
            body.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#ffffff"/>'
            )
            txt = f"{int(m[i, j])}" if float(m[i, j]).is_integer() else f"{m[i, j]:.2f}"
            body.append(_text(x + cell / 2, y + cell / 2 + 4, txt, extra=f' fill="{ink}"'))
    body.append(_text(left + cell * m.shape[1] / 2, height - 12, "predicted"))
    return _doc(width, height, body)


def pie_chart(labels, values, title="", radius=120) -> str:
    values = np.asarray(values, dtype=float)
    cx, cy = radius + 20, radius + 40
    width, height = 2 * radius + 220, 2 * radius + 60
    body = [_text(width / 2, 20, title, extra=' font-weight="bold"')]
    total = float(values.sum())
    if total <= 0:
        return _doc(width, height, body)
    angle = -math.pi / 2
    for i, (lab, v) in enumerate(zip(labels, values)):
        frac = v / total
        color = PALETTE[i % len(PALETTE)]
        if frac >= 1.0:
            body.append(f'<circle cx="{cx}" cy="{cy}" r="{radius}" fill="{color}"/>')
        elif frac > 0:
            end = angle + 2 * math.pi * frac
            x0, y0 = cx + radius * math.cos(angle), cy + radius * math.sin(angle)
            x1, y1 = cx + radius * math.cos(end), cy + radius * math.sin(end)
            large = 1 if frac > 0.5 else 0
            body.append(
                f'<path d="M {cx} {cy} L {_f(x0)} {_f(y0)} A {radius} {radius} 0 {large} 1 '
                f'{_f(x1)} {_f(y1)} Z" fill="{color}"/>'
            )
            angle = end
        ly = 50 + 20 * i
        body.append(f'<rect x="{2 * radius + 50}" y="{ly - 10}" width="12" height="12" fill="{color}"/>')
        body.append(_text(2 * radius + 68, ly, f"{lab} ({100 * frac:.1f}%)", anchor="start"))
    return _doc(width, height, body)
