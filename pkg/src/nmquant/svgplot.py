"""Minimal deterministic SVG plotting.

Only the subset needed for the harness figures: axes with ticks, polylines,
circle markers, and text labels on a fixed 640x480 canvas. All coordinates
are formatted with two decimals and the output contains no timestamps or
randomness, so identical inputs produce byte-identical files (golden-file
friendly).

Plot kinds:

* ``acc-vs-compression`` - accuracy against the packed compression ratio,
  one polyline per regularizer, from the matrix ``summary.csv``;
* ``acc-vs-bits`` - accuracy against weight bit-width (FP plotted at 32),
  one polyline per regularizer, 2:4 rows of ``summary.csv``;
* ``bound-gap`` - the per-unit-norm lower/upper error bounds against the
  angle, from the bounds campaign CSV.
"""

from __future__ import annotations

from dataclasses import dataclass

WIDTH, HEIGHT = 640.0, 480.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70.0, 20.0, 30.0, 50.0

PLOT_KINDS = ("acc-vs-compression", "acc-vs-bits", "bound-gap")

_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


class PlotError(ValueError):
    """CSV input does not match the requested plot kind."""


def _f(x: float) -> str:
    return f"{x:.2f}"


@dataclass
class _Frame:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def px(self, x: float) -> float:
        span = self.x_hi - self.x_lo or 1.0
        return MARGIN_L + (x - self.x_lo) / span * (WIDTH - MARGIN_L - MARGIN_R)

    def py(self, y: float) -> float:
        span = self.y_hi - self.y_lo or 1.0
        return HEIGHT - MARGIN_B - (y - self.y_lo) / span * (HEIGHT - MARGIN_T - MARGIN_B)


def _frame(xs, ys) -> _Frame:
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad_x = 0.05 * (x_hi - x_lo)
    pad_y = 0.05 * (y_hi - y_lo)
    return _Frame(x_lo - pad_x, x_hi + pad_x, y_lo - pad_y, y_hi + pad_y)


def _svg(title: str, series: list, x_ticks, y_ticks, x_label: str, y_label: str) -> str:
    """Render labelled polyline/marker series into an SVG document.

    ``series`` holds (name, [(x, y), ...]) pairs; ticks are data-space
    values rendered on the axes.
    """
    xs = [p[0] for _, pts in series for p in pts]
    ys = [p[1] for _, pts in series for p in pts]
    if not xs:
        raise PlotError("nothing to plot (empty series)")
    fr = _frame(xs + list(x_ticks), ys + list(y_ticks))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0f}" '
        f'height="{HEIGHT:.0f}" viewBox="0 0 {WIDTH:.0f} {HEIGHT:.0f}">',
        f'<rect x="0" y="0" width="{WIDTH:.0f}" height="{HEIGHT:.0f}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="monospace" font-size="14">{title}</text>',
    ]
    # axes
    x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
    out.append(
        f'<line x1="{_f(x0)}" y1="{_f(MARGIN_T)}" x2="{_f(x0)}" y2="{_f(y0)}" '
        'stroke="black" stroke-width="1"/>'
    )
    out.append(
        f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(WIDTH - MARGIN_R)}" '
        f'y2="{_f(y0)}" stroke="black" stroke-width="1"/>'
    )
    for tx in x_ticks:
        px = fr.px(tx)
        out.append(
            f'<line x1="{_f(px)}" y1="{_f(y0)}" x2="{_f(px)}" y2="{_f(y0 + 5)}" '
            'stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_f(px)}" y="{_f(y0 + 18)}" text-anchor="middle" '
            f'font-family="monospace" font-size="11">{tx:.6g}</text>'
        )
    for ty in y_ticks:
        py = fr.py(ty)
        out.append(
            f'<line x1="{_f(x0 - 5)}" y1="{_f(py)}" x2="{_f(x0)}" y2="{_f(py)}" '
            'stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_f(x0 - 8)}" y="{_f(py + 4)}" text-anchor="end" '
            f'font-family="monospace" font-size="11">{ty:.6g}</text>'
        )
    out.append(
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 10:.0f}" text-anchor="middle" '
        f'font-family="monospace" font-size="12">{x_label}</text>'
    )
    out.append(
        f'<text x="15" y="{HEIGHT / 2:.0f}" text-anchor="middle" '
        f'font-family="monospace" font-size="12" '
        f'transform="rotate(-90 15 {HEIGHT / 2:.0f})">{y_label}</text>'
    )
    for k, (name, pts) in enumerate(series):
        color = _SERIES_COLORS[k % len(_SERIES_COLORS)]
        if len(pts) > 1:
            coords = " ".join(f"{_f(fr.px(x))},{_f(fr.py(y))}" for x, y in pts)
            out.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" '
                'stroke-width="1.5"/>'
            )
        for x, y in pts:
            out.append(
                f'<circle cx="{_f(fr.px(x))}" cy="{_f(fr.py(y))}" r="3" '
                f'fill="{color}"/>'
            )
        out.append(
            f'<text x="{_f(WIDTH - MARGIN_R - 5)}" y="{_f(MARGIN_T + 15 + 14 * k)}" '
            f'text-anchor="end" font-family="monospace" font-size="11" '
            f'fill="{color}">{name}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_csv(text: str) -> tuple[list, list]:
    lines = [l for l in text.splitlines() if l.strip()]
    if len(lines) < 2:
        raise PlotError("CSV has no data rows")
    header = lines[0].split(",")
    rows = [l.split(",") for l in lines[1:]]
    return header, rows


def _col(header, rows, name):
    try:
        idx = header.index(name)
    except ValueError:
        raise PlotError(f"CSV is missing column {name!r}") from None
    return [row[idx] for row in rows]


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if lo == hi:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def plot_csv(csv_text: str, kind: str) -> str:
    """Render one of the known plot kinds from its CSV schema."""
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    header, rows = _read_csv(csv_text)

    if kind == "bound-gap":
        theta = [float(v) for v in _col(header, rows, "theta")]
        lower = [float(v) for v in _col(header, rows, "lower")]
        upper = [float(v) for v in _col(header, rows, "upper")]
        pts = sorted(zip(theta, lower, upper))
        series = [
            ("lower", [(t, l) for t, l, _ in pts]),
            ("upper", [(t, u) for t, _, u in pts]),
        ]
        return _svg(
            "error bounds vs angle", series,
            _ticks(min(theta), max(theta)), _ticks(0.0, max(upper)),
            "theta (rad)", "bound per unit norm^2",
        )

    # accuracy plots share the summary.csv schema
    nm = _col(header, rows, "n_m")
    bits = _col(header, rows, "bits")
    reg = _col(header, rows, "reg")
    acc = _col(header, rows, "accuracy")
    ratio = _col(header, rows, "compression_ratio")

    series = []
    reg_names = sorted(set(reg))
    if kind == "acc-vs-compression":
        x_vals = set()
        for rname in reg_names:
            pts = []
            for i in range(len(rows)):
                if reg[i] != rname or acc[i] == "-" or bits[i] == "fp":
                    continue
                x = float(ratio[i])
                pts.append((x, float(acc[i])))
                x_vals.add(x)
            if pts:
                series.append((rname, sorted(pts)))
        if not series:
            raise PlotError("no converged compressed cells to plot")
        ys = [p[1] for _, pts in series for p in pts]
        return _svg(
            "accuracy vs compression ratio", series,
            sorted(x_vals), _ticks(min(ys), max(ys)),
            "compression ratio (x)", "test accuracy",
        )

    # acc-vs-bits: 2:4 rows, fp plotted at 32
    pts_by_reg = {}
    for i in range(len(rows)):
        if nm[i] != "2:4" or acc[i] == "-":
            continue
        b = 32.0 if bits[i] == "fp" else float(bits[i])
        pts_by_reg.setdefault(reg[i], []).append((b, float(acc[i])))
    series = [(r, sorted(p)) for r, p in sorted(pts_by_reg.items()) if p]
    if not series:
        raise PlotError("no converged 2:4 cells to plot")
    ys = [p[1] for _, pts in series for p in pts]
    xs = sorted({p[0] for _, pts in series for p in pts})
    return _svg(
        "accuracy vs weight bits (2:4)", series,
        xs, _ticks(min(ys), max(ys)),
        "weight bits", "test accuracy",
    )
