"""Minimal static SVG line charts; a convenience, not a contract surface."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

_PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")

_WIDTH, _HEIGHT = 640, 400
_LEFT, _RIGHT, _TOP, _BOTTOM = 64, 24, 40, 48


def write_line_chart(path: str | Path, x_values: Sequence[float],
                     series: Mapping[str, Sequence[float]], *,
                     title: str = "", x_label: str = "", y_label: str = "") -> None:
    """Plot series of [0, 1] fractions against shared numeric x values."""
    xs = [float(x) for x in x_values]
    if not xs:
        raise ValueError("chart needs at least one x value")
    x_min, x_max = min(xs), max(xs)
    span = (x_max - x_min) or 1.0

    def sx(x: float) -> float:
        return _LEFT + (x - x_min) / span * (_WIDTH - _LEFT - _RIGHT)

    def sy(y: float) -> float:
        return _HEIGHT - _BOTTOM - y * (_HEIGHT - _TOP - _BOTTOM)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="monospace" font-size="12">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for i in range(5):
        frac = i / 4
        y = sy(frac)
        parts.append(
            f'<line x1="{_LEFT}" y1="{y:.2f}" x2="{_WIDTH - _RIGHT}" y2="{y:.2f}" '
            f'stroke="#dddddd"/>'
        )
        parts.append(f'<text x="{_LEFT - 8}" y="{y + 4:.2f}" text-anchor="end">{frac:.2f}</text>')
    for x in sorted(set(xs)):
        parts.append(
            f'<text x="{sx(x):.2f}" y="{_HEIGHT - _BOTTOM + 18}" text-anchor="middle">{x:g}</text>'
        )
    parts.append(
        f'<line x1="{_LEFT}" y1="{sy(0):.2f}" x2="{_WIDTH - _RIGHT}" y2="{sy(0):.2f}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_LEFT}" y1="{sy(0):.2f}" x2="{_LEFT}" y2="{sy(1):.2f}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{_WIDTH / 2:.1f}" y="{_HEIGHT - 10}" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{_HEIGHT / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_HEIGHT / 2:.1f})">{y_label}</text>'
    )
    for idx, (name, values) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join(
            f"{sx(x):.2f},{sy(float(v)):.2f}" for x, v in zip(xs, values) if v is not None
        )
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>')
        legend_y = _TOP + 16 * idx
        parts.append(
            f'<line x1="{_WIDTH - _RIGHT - 150}" y1="{legend_y}" x2="{_WIDTH - _RIGHT - 130}" '
            f'y2="{legend_y}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{_WIDTH - _RIGHT - 124}" y="{legend_y + 4}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
