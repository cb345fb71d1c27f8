"""Minimal self-contained SVG line plots (no plotting dependency).

Advisory artifacts only: each figure is a fixed-size canvas with an axes
box, tick labels and one polyline per series.
"""

from __future__ import annotations

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


def line_plot(series: dict[str, np.ndarray], title: str, xlabel: str, ylabel: str,
              width: int = 640, height: int = 480, equal_axes: bool = False) -> str:
    """Render named (n, 2) polylines to an SVG string."""
    pts_all = np.vstack([np.asarray(v, dtype=float) for v in series.values() if len(v)])
    x_lo, y_lo = pts_all.min(axis=0)
    x_hi, y_hi = pts_all.max(axis=0)
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    if equal_axes:
        cx, cy = 0.5 * (x_lo + x_hi), 0.5 * (y_lo + y_hi)
        half = 0.5 * max(x_hi - x_lo, y_hi - y_lo)
        x_lo, x_hi = cx - half, cx + half
        y_lo, y_hi = cy - half, cy + half
    mx, my = 0.05 * (x_hi - x_lo), 0.05 * (y_hi - y_lo)
    x_lo, x_hi, y_lo, y_hi = x_lo - mx, x_hi + mx, y_lo - my, y_hi + my
    left, right, top, bottom = 70, 20, 40, 50

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(y):
        return height - bottom - (y - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{width - left - right}" '
        f'height="{height - top - bottom}" fill="none" stroke="#444"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{sx(tx):.1f}" y1="{height - bottom}" x2="{sx(tx):.1f}" '
                     f'y2="{height - bottom + 4}" stroke="#444"/>')
        parts.append(f'<text x="{sx(tx):.1f}" y="{height - bottom + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{tx:.2f}</text>')
    for ty in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{left - 4}" y1="{sy(ty):.1f}" x2="{left}" '
                     f'y2="{sy(ty):.1f}" stroke="#444"/>')
        parts.append(f'<text x="{left - 7}" y="{sy(ty) + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{ty:.3g}</text>')
    parts.append(f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="11">{xlabel}</text>')
    parts.append(f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="11" '
                 f'transform="rotate(-90 14 {height / 2:.1f})">{ylabel}</text>')
    for k, (name, pts) in enumerate(series.items()):
        pts = np.asarray(pts, dtype=float)
        if len(pts) == 0:
            continue
        color = _COLORS[k % len(_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - right - 6}" y="{top + 16 + 14 * k}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def project_iso(points3: np.ndarray) -> np.ndarray:
    """Fixed isometric projection of 3-D points for the EE path figure."""
    p = np.asarray(points3, dtype=float)
    ang = np.deg2rad(30.0)
    x = p[:, 0] - p[:, 1] * np.cos(ang)
    y = p[:, 2] + p[:, 1] * np.sin(ang) * 0.5
    return np.column_stack([x, y])
