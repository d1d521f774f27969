"""Minimal deterministic SVG charts from CSV rows (no external deps).

Output is byte-stable for a fixed input: no timestamps, no randomness, fixed
float formatting.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .errors import ConfigError

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 58, 16, 24, 42

PALETTE = (
    "#4477aa", "#ee6677", "#228833", "#ccbb44",
    "#66ccee", "#aa3377", "#bbbbbb", "#000000",
)


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if x == x else "nan"


def _read_rows(csv_path) -> list[dict[str, str]]:
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _scale(vals, lo_pad=0.05):
    lo, hi = min(vals), max(vals)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    span = hi - lo
    return lo - lo_pad * span, hi + lo_pad * span


class _Svg:
    def __init__(self, title: str):
        self.buf = io.StringIO()
        self.buf.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        )
        self.buf.write(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n')
        if title:
            self.buf.write(
                f'<text x="{WIDTH / 2:.1f}" y="16" text-anchor="middle" '
                f'font-family="sans-serif" font-size="13">{title}</text>\n'
            )

    def axes(self, x_label: str, y_label: str):
        x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
        x1, y1 = WIDTH - MARGIN_R, MARGIN_T
        self.buf.write(
            f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>\n'
            f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>\n'
        )
        self.buf.write(
            f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{x_label}</text>\n'
        )
        self.buf.write(
            f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{y_label}</text>\n'
        )

    def finish(self) -> str:
        self.buf.write("</svg>\n")
        return self.buf.getvalue()


def _to_px(x, lo, hi, px0, px1):
    if hi == lo:
        return (px0 + px1) / 2
    return px0 + (x - lo) / (hi - lo) * (px1 - px0)


def render_line_chart(
    rows: list[dict[str, str]],
    x_col: str,
    y_col: str,
    group_col: str | None = None,
    title: str = "",
) -> str:
    """Polyline per group plus a mean band across groups at shared x values."""
    svg = _Svg(title)
    svg.axes(x_col, y_col)
    usable = [r for r in rows if r.get(x_col) not in (None, "") and r.get(y_col) not in (None, "")]
    if not usable:
        return svg.finish()
    xs = [float(r[x_col]) for r in usable]
    ys = [float(r[y_col]) for r in usable]
    xlo, xhi = _scale(xs, 0.0)
    ylo, yhi = _scale(ys)
    px = lambda x: _to_px(x, xlo, xhi, MARGIN_L, WIDTH - MARGIN_R)
    py = lambda y: _to_px(y, ylo, yhi, HEIGHT - MARGIN_B, MARGIN_T)

    groups: dict[str, list[tuple[float, float]]] = {}
    for r in usable:
        key = r.get(group_col, "all") if group_col else "all"
        groups.setdefault(key, []).append((float(r[x_col]), float(r[y_col])))

    # mean +- stderr band across groups at common x
    by_x: dict[float, list[float]] = {}
    for pts in groups.values():
        for x, y in pts:
            by_x.setdefault(x, []).append(y)
    common = sorted(x for x, vals in by_x.items() if len(vals) == len(groups))
    if len(groups) > 1 and len(common) > 1:
        means, errs = [], []
        for x in common:
            vals = by_x[x]
            m = sum(vals) / len(vals)
            var = sum((v - m) ** 2 for v in vals) / max(len(vals) - 1, 1)
            means.append(m)
            errs.append((var / len(vals)) ** 0.5)
        upper = [(x, m + e) for x, m, e in zip(common, means, errs)]
        lower = [(x, m - e) for x, m, e in zip(common, means, errs)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in upper + lower[::-1])
        svg.buf.write(f'<polygon points="{pts}" fill="#4477aa" opacity="0.15"/>\n')

    for gi, key in enumerate(sorted(groups)):
        pts = sorted(groups[key])
        color = PALETTE[gi % len(PALETTE)]
        path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        svg.buf.write(
            f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>\n'
        )
        svg.buf.write(
            f'<text x="{WIDTH - MARGIN_R - 4}" y="{MARGIN_T + 14 * (gi + 1)}" '
            f'text-anchor="end" font-family="sans-serif" font-size="11" '
            f'fill="{color}">{key}</text>\n'
        )

    for frac in (0.0, 0.5, 1.0):
        yv = ylo + frac * (yhi - ylo)
        xv = xlo + frac * (xhi - xlo)
        svg.buf.write(
            f'<text x="{MARGIN_L - 6}" y="{py(yv):.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{_fmt(yv)}</text>\n'
        )
        svg.buf.write(
            f'<text x="{px(xv):.1f}" y="{HEIGHT - MARGIN_B + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{_fmt(xv)}</text>\n'
        )
    return svg.finish()


def render_bar_chart(
    rows: list[dict[str, str]],
    x_col: str,
    y_col: str,
    err_col: str | None = None,
    title: str = "",
) -> str:
    """One bar per categorical x value, optional error whiskers."""
    svg = _Svg(title)
    svg.axes(x_col, y_col)
    usable = [r for r in rows if r.get(y_col) not in (None, "")]
    if not usable:
        return svg.finish()
    labels = [r[x_col] for r in usable]
    ys = [float(r[y_col]) for r in usable]
    errs = [float(r[err_col]) if err_col and r.get(err_col) else 0.0 for r in usable]
    ylo, yhi = _scale([0.0] + [y + e for y, e in zip(ys, errs)] + [y - e for y, e in zip(ys, errs)])
    py = lambda y: _to_px(y, ylo, yhi, HEIGHT - MARGIN_B, MARGIN_T)
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    slot = plot_w / len(usable)
    bar_w = slot * 0.6
    for i, (label, y, e) in enumerate(zip(labels, ys, errs)):
        cx = MARGIN_L + slot * (i + 0.5)
        x = cx - bar_w / 2
        top = py(max(y, 0.0))
        base = py(min(y, 0.0))
        color = PALETTE[i % len(PALETTE)]
        svg.buf.write(
            f'<rect x="{x:.1f}" y="{top:.1f}" width="{bar_w:.1f}" '
            f'height="{abs(base - top):.1f}" fill="{color}" opacity="0.85"/>\n'
        )
        if e:
            svg.buf.write(
                f'<line x1="{cx:.1f}" y1="{py(y - e):.1f}" x2="{cx:.1f}" '
                f'y2="{py(y + e):.1f}" stroke="black"/>\n'
            )
        svg.buf.write(
            f'<text x="{cx:.1f}" y="{HEIGHT - MARGIN_B + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{label}</text>\n'
        )
    for frac in (0.0, 0.5, 1.0):
        yv = ylo + frac * (yhi - ylo)
        svg.buf.write(
            f'<text x="{MARGIN_L - 6}" y="{py(yv):.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{_fmt(yv)}</text>\n'
        )
    return svg.finish()


def plot_csv(
    csv_path,
    kind: str,
    x_col: str,
    y_col: str,
    out_path,
    group_col: str | None = None,
    err_col: str | None = None,
    title: str = "",
) -> Path:
    rows = _read_rows(csv_path)
    for col in (x_col, y_col):
        if rows and col not in rows[0]:
            raise ConfigError(f"column {col!r} not in {sorted(rows[0])}")
    if kind == "line":
        svg = render_line_chart(rows, x_col, y_col, group_col, title)
    elif kind == "bar":
        svg = render_bar_chart(rows, x_col, y_col, err_col, title)
    else:
        raise ConfigError(f"unknown chart kind {kind!r} (want 'line' or 'bar')")
    out = Path(out_path)
    out.write_text(svg, encoding="utf-8")
    return out
