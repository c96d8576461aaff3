"""Report figures as hand-assembled SVG.

The charts are deliberately built from strings rather than a plotting
library: the output must be byte-identical across runs and machines, and
the two figures we need (a penalty sweep line chart and a per-condition
bar chart) are simple enough to lay out directly. All coordinates are
formatted to one decimal place so float noise can never leak into the file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .errors import InvalidInput, IoError
from .harness import EvalReport, ExperimentCondition, PenaltySweepResult

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")

_FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _fmt(value: float) -> str:
    return f"{value:.1f}"


def _text(x, y, content, size=11, anchor="middle", extra="") -> str:
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
        f'text-anchor="{anchor}" {_FONT} {extra}>{escape(content)}</text>'
    )


def _line(x1, y1, x2, y2, stroke="#333333", width=1.0) -> str:
    return (
        f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
        f'stroke="{stroke}" stroke-width="{_fmt(width)}"/>'
    )


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">'
    )
    background = f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>'
    return "\n".join([head, background, *body, "</svg>"]) + "\n"


def _y_axis(parts, left, top, plot_h, plot_w):
    parts.append(_line(left, top, left, top + plot_h))
    for tick in (0, 25, 50, 75, 100):
        y = top + plot_h * (1 - tick / 100.0)
        parts.append(_line(left - 4, y, left, y))
        parts.append(_line(left, y, left + plot_w, y, stroke="#dddddd", width=0.5))
        parts.append(_text(left - 8, y + 3.5, str(tick), size=9, anchor="end"))


def render_sweep_chart(result: PenaltySweepResult, title: str = "Accuracy vs. penalty") -> str:
    """One panel per benchmark; within a panel, one polyline per model."""
    if not result.reports:
        raise InvalidInput("sweep result has no reports")
    benchmarks = sorted({r.benchmark for r in result.reports})
    models = sorted({r.model for r in result.reports})
    penalties = list(result.penalties)
    if not penalties:
        raise InvalidInput("sweep result has no penalties")
    lo, hi = min(penalties), max(penalties)
    span = hi - lo if hi > lo else 1.0

    panel_w, panel_h = 260.0, 180.0
    left_margin, top_margin, gap = 52.0, 46.0, 44.0
    bottom_margin = 46.0
    legend_h = 10.0 + 16.0 * len(models)
    width = left_margin + len(benchmarks) * (panel_w + gap)
    height = top_margin + panel_h + bottom_margin + legend_h

    parts = [_text(width / 2, 20, title, size=14, extra='font-weight="bold"')]
    for b_idx, benchmark in enumerate(benchmarks):
        left = left_margin + b_idx * (panel_w + gap)
        top = top_margin
        parts.append(_text(left + panel_w / 2, top - 8, benchmark, size=12))
        _y_axis(parts, left, top, panel_h, panel_w)
        parts.append(_line(left, top + panel_h, left + panel_w, top + panel_h))
        for gamma in penalties:
            x = left + panel_w * (gamma - lo) / span
            parts.append(_line(x, top + panel_h, x, top + panel_h + 4))
            parts.append(_text(x, top + panel_h + 16, f"{gamma:g}", size=9))
        parts.append(_text(left + panel_w / 2, top + panel_h + 32, "penalty", size=10))
        for m_idx, model in enumerate(models):
            color = PALETTE[m_idx % len(PALETTE)]
            by_gamma = {
                r.penalty.gamma: r.accuracy
                for r in result.reports
                if r.benchmark == benchmark and r.model == model and r.penalty is not None
            }
            points = []
            for gamma in penalties:
                if gamma not in by_gamma:
                    continue
                x = left + panel_w * (gamma - lo) / span
                y = top + panel_h * (1 - by_gamma[gamma] / 100.0)
                points.append(f"{_fmt(x)},{_fmt(y)}")
            if points:
                parts.append(
                    f'<polyline points="{" ".join(points)}" fill="none" '
                    f'stroke="{color}" stroke-width="1.5"/>'
                )
                for pt in points:
                    px, py = pt.split(",")
                    parts.append(f'<circle cx="{px}" cy="{py}" r="2.5" fill="{color}"/>')
    legend_top = top_margin + panel_h + bottom_margin
    for m_idx, model in enumerate(models):
        color = PALETTE[m_idx % len(PALETTE)]
        y = legend_top + 16.0 * m_idx
        parts.append(
            f'<rect x="{_fmt(left_margin)}" y="{_fmt(y)}" width="12.0" height="12.0" '
            f'fill="{color}"/>'
        )
        parts.append(_text(left_margin + 18, y + 10, model, size=10, anchor="start"))
    return _svg(width, height, parts)


def render_condition_chart(
    reports: Iterable[EvalReport], title: str = "Accuracy by condition"
) -> str:
    """Grouped bars: one group per condition, one bar per (model, benchmark)."""
    reports = list(reports)
    if not reports:
        raise InvalidInput("no reports to chart")
    conditions = [c for c in ExperimentCondition if any(r.condition is c for r in reports)]
    series = sorted({(r.model, r.benchmark) for r in reports})
    values = {(r.model, r.benchmark, r.condition): r.accuracy for r in reports}

    bar_w = 18.0
    group_w = bar_w * len(series) + 24.0
    plot_h = 200.0
    left_margin, top_margin = 52.0, 46.0
    bottom_margin = 40.0
    legend_h = 10.0 + 16.0 * len(series)
    plot_w = group_w * len(conditions)
    width = left_margin + plot_w + 20.0
    height = top_margin + plot_h + bottom_margin + legend_h

    parts = [_text(width / 2, 20, title, size=14, extra='font-weight="bold"')]
    _y_axis(parts, left_margin, top_margin, plot_h, plot_w)
    parts.append(
        _line(left_margin, top_margin + plot_h, left_margin + plot_w, top_margin + plot_h)
    )
    for c_idx, condition in enumerate(conditions):
        group_left = left_margin + c_idx * group_w + 12.0
        for s_idx, (model, benchmark) in enumerate(series):
            key = (model, benchmark, condition)
            if key not in values:
                continue
            accuracy = values[key]
            bar_h = plot_h * accuracy / 100.0
            x = group_left + s_idx * bar_w
            y = top_margin + plot_h - bar_h
            color = PALETTE[s_idx % len(PALETTE)]
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar_w - 3)}" '
                f'height="{_fmt(bar_h)}" fill="{color}"/>'
            )
            parts.append(_text(x + (bar_w - 3) / 2, y - 3, f"{accuracy:.1f}", size=8))
        parts.append(
            _text(
                left_margin + c_idx * group_w + group_w / 2,
                top_margin + plot_h + 14,
                condition.key,
                size=8,
            )
        )
    legend_top = top_margin + plot_h + bottom_margin
    for s_idx, (model, benchmark) in enumerate(series):
        color = PALETTE[s_idx % len(PALETTE)]
        y = legend_top + 16.0 * s_idx
        parts.append(
            f'<rect x="{_fmt(left_margin)}" y="{_fmt(y)}" width="12.0" height="12.0" '
            f'fill="{color}"/>'
        )
        parts.append(
            _text(left_margin + 18, y + 10, f"{model} / {benchmark}", size=10, anchor="start")
        )
    return _svg(width, height, parts)


def write_svg(svg_text: str, path) -> Path:
    path = Path(path)
    try:
        path.write_text(svg_text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write figure to {path}: {exc}") from exc
    return path
