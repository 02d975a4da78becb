"""Static SVG line charts for training curves and ROC plots."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 520, 380
LEFT, TOP, PLOT_W, PLOT_H = 64, 32, 320, 280
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 10))
        v += step
    return ticks


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str,
               xlim: tuple[float, float] | None = None, ylim: tuple[float, float] | None = None,
               diagonal: bool = False) -> str:
    """One polyline per series, axes with ticks, and a legend.

    ``diagonal`` adds the dashed chance line from (xmin, ymin) to (xmax, ymax).
    """
    pts = [p for s in series.values() for p in s if all(math.isfinite(v) for v in p)]
    if not pts:
        raise ValueError("nothing to plot: every series is empty")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = xlim or (min(xs), max(xs))
    y0, y1 = ylim or (min(ys), max(ys))
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * PLOT_W

    def sy(y):
        return TOP + (1.0 - (y - y0) / (y1 - y0)) * PLOT_H

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{LEFT + PLOT_W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect class="plot-area" x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}" '
           f'fill="none" stroke="black"/>']
    for t in _nice_ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.2f}" y1="{TOP + PLOT_H}" x2="{sx(t):.2f}" y2="{TOP + PLOT_H + 4}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{TOP + PLOT_H + 16}" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        out.append(f'<line x1="{LEFT - 4}" y1="{sy(t):.2f}" x2="{LEFT}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 7}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{LEFT + PLOT_W / 2}" y="{HEIGHT - 30}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{TOP + PLOT_H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + PLOT_H / 2})">{escape(ylabel)}</text>')
    if diagonal:
        out.append(f'<line class="chance" x1="{sx(x0):.2f}" y1="{sy(y0):.2f}" x2="{sx(x1):.2f}" y2="{sy(y1):.2f}" '
                   f'stroke="gray" stroke-dasharray="6,4"/>')
    for i, (name, s) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s if math.isfinite(x) and math.isfinite(y))
        out.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"/>')
        ly = TOP + 12 + 16 * i
        out.append(f'<line x1="{LEFT + PLOT_W + 12}" y1="{ly}" x2="{LEFT + PLOT_W + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + PLOT_W + 34}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def roc_svg(fpr, tpr, label: str = "model") -> str:
    return line_chart({label: list(zip(map(float, fpr), map(float, tpr)))}, "ROC", "false positive rate",
                      "true positive rate", xlim=(0.0, 1.0), ylim=(0.0, 1.0), diagonal=True)


def curves_svg(rows: list[dict], metric: str) -> str:
    """Train/val curve of ``metric`` (loss, acc, recall) from curve-CSV rows."""
    cols = {"loss": ["loss"], "acc": ["acc"], "recall": ["recall_benign", "recall_malignant"]}[metric]
    series: dict[str, list] = {}
    for r in rows:
        for c in cols:
            v = r.get(c, "")
            if v in ("", "undefined"):
                continue
            name = f"{r['split']} {c}" if len(cols) > 1 else r["split"]
            series.setdefault(name, []).append((float(r["epoch"]), float(v)))
    ylim = (0.0, 1.0) if metric != "loss" else None
    title = {"loss": "Loss", "acc": "Accuracy", "recall": "Recall"}[metric]
    return line_chart(series, title, "epoch", metric, ylim=ylim)
