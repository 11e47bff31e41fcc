"""Minimal deterministic SVG charts for run reports.

Charts are emitted as plain strings with fixed two-decimal coordinates and
no timestamps or random ids, so the same inputs always produce the same
bytes. Only the primitives the reports need exist: a multi-series line
chart, a grouped bar chart, and a horizontal panel row. Axis steps use a
1-2-5 ladder computed with plain arithmetic (no libm calls).
"""

from __future__ import annotations

from typing import Sequence

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)

_MARGIN_LEFT = 58.0
_MARGIN_RIGHT = 16.0
_MARGIN_TOP = 40.0
_MARGIN_BOTTOM = 48.0

Series = Sequence[tuple[str, Sequence[tuple[float, float | None]]]]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def esc(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def _nice_step(vmax: float, target_ticks: int = 5) -> float:
    if vmax <= 0:
        return 1.0
    raw = vmax / target_ticks
    power = 1.0
    while power * 10 <= raw:
        power *= 10
    while power > raw:
        power /= 10
    for mult in (1.0, 2.0, 5.0, 10.0):
        if power * mult >= raw:
            return power * mult
    return power * 10


def _frame(width: float, height: float, title: str, body: str) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}" font-family="sans-serif">\n'
        f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>\n'
        f'<text x="{_fmt(width / 2)}" y="22" text-anchor="middle" font-size="15" '
        f'fill="#202020">{esc(title)}</text>\n'
        f"{body}"
        "</svg>\n"
    )


def _no_data_body(width: float, height: float) -> str:
    return (
        f'<text x="{_fmt(width / 2)}" y="{_fmt(height / 2)}" text-anchor="middle" '
        f'font-size="14" fill="#909090">no data</text>\n'
    )


def _axes(
    width: float,
    height: float,
    x_label: str,
    y_label: str,
    y_max: float,
    y_step: float,
    y_scale,
) -> str:
    x0, x1 = _MARGIN_LEFT, width - _MARGIN_RIGHT
    y0, y1 = height - _MARGIN_BOTTOM, _MARGIN_TOP
    parts = [
        f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y0)}" stroke="#404040"/>\n',
        f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x0)}" y2="{_fmt(y1)}" stroke="#404040"/>\n',
        f'<text x="{_fmt((x0 + x1) / 2)}" y="{_fmt(height - 10)}" text-anchor="middle" '
        f'font-size="12" fill="#202020">{esc(x_label)}</text>\n',
        f'<text x="14" y="{_fmt((y0 + y1) / 2)}" text-anchor="middle" font-size="12" '
        f'fill="#202020" transform="rotate(-90 14 {_fmt((y0 + y1) / 2)})">{esc(y_label)}</text>\n',
    ]
    tick = 0.0
    while tick <= y_max + 1e-9:
        py = y_scale(tick)
        parts.append(
            f'<line x1="{_fmt(x0)}" y1="{_fmt(py)}" x2="{_fmt(x1)}" y2="{_fmt(py)}" '
            f'stroke="#e0e0e0"/>\n'
            f'<text x="{_fmt(x0 - 6)}" y="{_fmt(py + 4)}" text-anchor="end" font-size="11" '
            f'fill="#404040">{_fmt(tick)}</text>\n'
        )
        tick += y_step
    return "".join(parts)


def _legend(names: Sequence[str], width: float) -> str:
    parts = []
    x = _MARGIN_LEFT + 4
    y = _MARGIN_TOP - 10
    for i, name in enumerate(names):
        color = PALETTE[i % len(PALETTE)]
        parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y - 8)}" width="10" height="10" fill="{color}"/>\n'
            f'<text x="{_fmt(x + 14)}" y="{_fmt(y + 1)}" font-size="11" fill="#202020">'
            f"{esc(name)}</text>\n"
        )
        x += 14 + 7 * len(name) + 18
    return "".join(parts)


def line_chart(
    title: str,
    x_label: str,
    y_label: str,
    series: Series,
    width: float = 640.0,
    height: float = 420.0,
) -> str:
    """Multi-series line chart; None y-values break the line."""
    xs = sorted({x for _, pts in series for x, _ in pts})
    ys = [y for _, pts in series for _, y in pts if y is not None]
    if not xs or not ys:
        return _frame(width, height, title, _no_data_body(width, height))
    y_max = max(max(ys), 1e-9)
    y_step = _nice_step(y_max)
    y_top = y_step
    while y_top < y_max - 1e-9:
        y_top += y_step
    x0, x1 = _MARGIN_LEFT, width - _MARGIN_RIGHT
    y0, y1 = height - _MARGIN_BOTTOM, _MARGIN_TOP
    x_min, x_max = xs[0], xs[-1]

    def sx(x: float) -> float:
        if x_max == x_min:
            return (x0 + x1) / 2
        return x0 + (x - x_min) * (x1 - x0) / (x_max - x_min)

    def sy(y: float) -> float:
        return y0 - y * (y0 - y1) / y_top

    body = [_axes(width, height, x_label, y_label, y_top, y_step, sy)]
    for x in xs:
        body.append(
            f'<text x="{_fmt(sx(x))}" y="{_fmt(y0 + 16)}" text-anchor="middle" font-size="11" '
            f'fill="#404040">{_fmt(x).rstrip("0").rstrip(".")}</text>\n'
        )
    for i, (name, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        run: list[str] = []
        segments: list[list[str]] = []
        for x, y in pts:
            if y is None:
                if run:
                    segments.append(run)
                    run = []
                continue
            run.append(f"{_fmt(sx(x))},{_fmt(sy(y))}")
        if run:
            segments.append(run)
        for seg in segments:
            if len(seg) > 1:
                body.append(
                    f'<polyline points="{" ".join(seg)}" fill="none" stroke="{color}" '
                    f'stroke-width="2"/>\n'
                )
        for x, y in pts:
            if y is not None:
                body.append(
                    f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}"/>\n'
                )
    body.append(_legend([name for name, _ in series], width))
    return _frame(width, height, title, "".join(body))


def grouped_bar_chart(
    title: str,
    x_label: str,
    y_label: str,
    categories: Sequence[str],
    groups: Sequence[tuple[str, Sequence[float | None]]],
    width: float = 640.0,
    height: float = 420.0,
) -> str:
    """Bars per category, one bar per group; None values are skipped."""
    ys = [v for _, values in groups for v in values if v is not None]
    if not categories or not groups or not ys:
        return _frame(width, height, title, _no_data_body(width, height))
    y_max = max(max(ys), 1e-9)
    y_step = _nice_step(y_max)
    y_top = y_step
    while y_top < y_max - 1e-9:
        y_top += y_step
    x0, x1 = _MARGIN_LEFT, width - _MARGIN_RIGHT
    y0, y1 = height - _MARGIN_BOTTOM, _MARGIN_TOP

    def sy(y: float) -> float:
        return y0 - y * (y0 - y1) / y_top

    body = [_axes(width, height, x_label, y_label, y_top, y_step, sy)]
    slot = (x1 - x0) / len(categories)
    bar_w = slot * 0.8 / len(groups)
    for ci, cat in enumerate(categories):
        cx = x0 + slot * (ci + 0.5)
        body.append(
            f'<text x="{_fmt(cx)}" y="{_fmt(y0 + 16)}" text-anchor="middle" font-size="11" '
            f'fill="#404040">{esc(str(cat))}</text>\n'
        )
        for gi, (_, values) in enumerate(groups):
            v = values[ci] if ci < len(values) else None
            if v is None:
                continue
            bx = cx - slot * 0.4 + gi * bar_w
            body.append(
                f'<rect x="{_fmt(bx)}" y="{_fmt(sy(v))}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(y0 - sy(v))}" fill="{PALETTE[gi % len(PALETTE)]}"/>\n'
            )
    body.append(_legend([name for name, _ in groups], width))
    return _frame(width, height, title, "".join(body))


def panel_row(panels: Sequence[str], panel_width: float, panel_height: float) -> str:
    """Place already-rendered SVG panels side by side in one document."""
    total_w = panel_width * max(len(panels), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(total_w)}" '
        f'height="{_fmt(panel_height)}" viewBox="0 0 {_fmt(total_w)} {_fmt(panel_height)}">\n'
    ]
    for i, panel in enumerate(panels):
        inner = panel.replace('xmlns="http://www.w3.org/2000/svg" ', "", 1)
        inner = inner.replace("<svg ", f'<svg x="{_fmt(i * panel_width)}" y="0" ', 1)
        parts.append(inner)
    parts.append("</svg>\n")
    return "".join(parts)
