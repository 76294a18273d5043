"""Minimal static SVG charts (grouped bars and polylines), no dependencies."""
from __future__ import annotations

from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")
W, H, PAD = 900, 420, 60


def _frame(title, body, legend):
    items = "".join(
        f'<rect x="{PAD + 160 * i}" y="12" width="12" height="12" fill="{COLORS[i % len(COLORS)]}"/>'
        f'<text x="{PAD + 160 * i + 16}" y="23" font-size="12">{escape(name)}</text>'
        for i, name in enumerate(legend))
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'font-family="sans-serif">\n'
            f'<text x="{W // 2}" y="{H - 8}" text-anchor="middle" font-size="13">{escape(title)}</text>\n'
            f'{items}\n'
            f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - 20}" y2="{H - PAD}" stroke="black"/>\n'
            f'<line x1="{PAD}" y1="40" x2="{PAD}" y2="{H - PAD}" stroke="black"/>\n'
            f'{body}</svg>\n')


def _y(v, top):
    return H - PAD - (H - PAD - 40) * (v / top if top else 0)


def bar_chart(title, labels, series):
    """``series``: {name: [value per label]}; one group of bars per label."""
    names = list(series)
    top = max((v for vals in series.values() for v in vals), default=0)
    n = max(len(labels), 1)
    slot = (W - 20 - PAD) / n
    bw = slot * 0.8 / max(len(names), 1)
    parts = []
    for i, label in enumerate(labels):
        x0 = PAD + i * slot + slot * 0.1
        for j, name in enumerate(names):
            v = series[name][i]
            y = _y(v, top)
            parts.append(f'<rect x="{x0 + j * bw:.1f}" y="{y:.1f}" width="{bw:.1f}" '
                         f'height="{H - PAD - y:.1f}" fill="{COLORS[j % len(COLORS)]}">'
                         f'<title>{escape(label)} {escape(name)}: {v}</title></rect>')
        if n <= 40:
            parts.append(f'<text x="{x0:.1f}" y="{H - PAD + 12}" font-size="8" '
                         f'transform="rotate(45 {x0:.1f} {H - PAD + 12})">{escape(label)}</text>')
    return _frame(title, "\n".join(parts) + "\n", names)


def line_chart(title, xs, series):
    names = list(series)
    top = max((v for vals in series.values() for v in vals), default=0)
    lo, hi = (min(xs), max(xs)) if xs else (0, 1)
    span = (hi - lo) or 1

    def px(x):
        return PAD + (W - 20 - PAD) * (x - lo) / span

    parts = []
    for j, name in enumerate(names):
        pts = " ".join(f"{px(x):.1f},{_y(v, top):.1f}" for x, v in zip(xs, series[name]))
        parts.append(f'<polyline fill="none" stroke="{COLORS[j % len(COLORS)]}" '
                     f'stroke-width="2" points="{pts}"/>')
    for x in xs:
        parts.append(f'<text x="{px(x):.1f}" y="{H - PAD + 14}" font-size="11" '
                     f'text-anchor="middle">{x}</text>')
    return _frame(title, "\n".join(parts) + "\n", names)
