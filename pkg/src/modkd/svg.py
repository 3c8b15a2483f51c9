"""Tiny static SVG emitter for result charts. No interactivity, no deps.

Provides exactly the three chart kinds the CLI needs: multi-series line
charts (with optional star markers), bar charts, and loss curves reuse the
line chart. Coordinates are mapped into a fixed margin box; axis ticks are
drawn from explicitly supplied positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


@dataclass
class Canvas:
    width: int = 640
    height: int = 420
    elements: list[str] = field(default_factory=list)

    def line(self, x1, y1, x2, y2, color="#333", width=1.0):
        self.elements.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{width}"/>'
        )

    def polyline(self, points, color, width=1.5):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.elements.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'
        )

    def circle(self, x, y, r, color):
        self.elements.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{r}" fill="{color}"/>')

    def star(self, x, y, r, color):
        import math

        pts = []
        for i in range(10):
            rad = r if i % 2 == 0 else 0.4 * r
            ang = -math.pi / 2 + i * math.pi / 5
            pts.append((x + rad * math.cos(ang), y + rad * math.sin(ang)))
        joined = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in pts)
        self.elements.append(f'<polygon points="{joined}" fill="{color}"/>')

    def rect(self, x, y, w, h, color):
        self.elements.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="{color}"/>'
        )

    def text(self, x, y, s, size=11, anchor="middle", color="#222"):
        self.elements.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}" fill="{color}">{_escape(s)}</text>'
        )

    def to_string(self) -> str:
        body = "\n".join(self.elements)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>\n'
            f"{body}\n</svg>\n"
        )

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_string())


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


@dataclass
class _Box:
    left: int = 64
    right: int = 24
    top: int = 36
    bottom: int = 48


def _axis(canvas, box, xlim, ylim, xticks, yticks, title, xlabel, ylabel):
    x0, y0 = box.left, canvas.height - box.bottom
    x1, y1 = canvas.width - box.right, box.top

    def sx(v):
        if xlim[1] == xlim[0]:
            return (x0 + x1) / 2
        return x0 + (v - xlim[0]) / (xlim[1] - xlim[0]) * (x1 - x0)

    def sy(v):
        if ylim[1] == ylim[0]:
            return (y0 + y1) / 2
        return y0 - (v - ylim[0]) / (ylim[1] - ylim[0]) * (y0 - y1)

    canvas.line(x0, y0, x1, y0)
    canvas.line(x0, y0, x0, y1)
    for tv in xticks:
        tx = sx(tv)
        canvas.line(tx, y0, tx, y0 + 4)
        canvas.text(tx, y0 + 18, _fmt(tv))
    for tv in yticks:
        ty = sy(tv)
        canvas.line(x0 - 4, ty, x0, ty)
        canvas.text(x0 - 8, ty + 4, _fmt(tv), anchor="end")
    canvas.text((x0 + x1) / 2, 20, title, size=13)
    canvas.text((x0 + x1) / 2, canvas.height - 12, xlabel)
    canvas.text(14, (y0 + y1) / 2, ylabel, anchor="middle")
    return sx, sy


def _spread(lo, hi):
    if hi <= lo:
        pad = max(abs(lo), 1.0) * 0.1
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.06
    return lo - pad, hi + pad


def _yticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(series, xticks=None, markers=None, title="", xlabel="", ylabel="") -> str:
    """Multi-series line chart.

    ``series``: list of (label, [(x, y), ...]).
    ``markers``: optional list of (label, [(x, y), ...]) drawn as stars in
    the matching series color.
    """
    if not series or all(len(pts) == 0 for _, pts in series):
        raise ValueError("line chart needs at least one data point")
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    if markers:
        ys += [y for _, pts in markers for _, y in pts]
    xlim = (min(xs), max(xs))
    ylim = _spread(min(ys), max(ys))
    canvas = Canvas()
    box = _Box()
    sx, sy = _axis(
        canvas, box, xlim, ylim,
        xticks if xticks is not None else _yticks(*xlim),
        _yticks(*ylim), title, xlabel, ylabel,
    )
    colors = {}
    for idx, (label, pts) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        colors[label] = color
        canvas.polyline([(sx(x), sy(y)) for x, y in pts], color)
        for x, y in pts:
            canvas.circle(sx(x), sy(y), 2.5, color)
        canvas.text(canvas.width - 30, box.top + 14 * idx + 4, label, anchor="end", color=color)
    for label, pts in markers or []:
        color = colors.get(label, "#222")
        for x, y in pts:
            canvas.star(sx(x), sy(y), 6, color)
    return canvas.to_string()


def bar_chart(labels, values, title="", xlabel="", ylabel="") -> str:
    if not labels:
        raise ValueError("bar chart needs at least one bar")
    canvas = Canvas()
    box = _Box()
    hi = max(max(values), 1e-12)
    _, sy = _axis(
        canvas, box, (0, len(labels)), (0, hi), [], _yticks(0, hi), title, xlabel, ylabel
    )
    x0 = box.left
    x1 = canvas.width - box.right
    y0 = canvas.height - box.bottom
    slot = (x1 - x0) / len(labels)
    for i, (lab, val) in enumerate(zip(labels, values)):
        left = x0 + i * slot + 0.18 * slot
        top = sy(val)
        canvas.rect(left, top, 0.64 * slot, y0 - top, _PALETTE[i % len(_PALETTE)])
        canvas.text(x0 + (i + 0.5) * slot, y0 + 18, str(lab))
        canvas.text(x0 + (i + 0.5) * slot, top - 6, _fmt(val))
    return canvas.to_string()
