"""Minimal standalone SVG figures: diagrams and replicate histograms."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .diagram import PersistenceDiagram
from .inference import OrderStatReport

W, H, PAD = 420, 420, 48
_MARKERS = {0: ("circle", "#000000"), 1: ("triangle", "#cc0000")}


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _axes(x0, x1, y0, y1, xlabel, ylabel, w=W, h=H):
    def sx(v):
        return PAD + (v - x0) / (x1 - x0) * (w - 2 * PAD)

    def sy(v):
        return h - PAD - (v - y0) / (y1 - y0) * (h - 2 * PAD)

    parts = [
        f'<rect x="{PAD}" y="{PAD}" width="{w - 2 * PAD}" height="{h - 2 * PAD}" '
        'fill="none" stroke="#444444" stroke-width="1"/>',
        f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{h / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {h / 2})">{escape(ylabel)}</text>',
        f'<text x="{PAD}" y="{h - PAD + 14}" font-size="10">{x0:.3g}</text>',
        f'<text x="{w - PAD}" y="{h - PAD + 14}" font-size="10" text-anchor="end">{x1:.3g}</text>',
        f'<text x="{PAD - 4}" y="{h - PAD}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 8}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    return sx, sy, parts


def _document(body: list[str], w=W, h=H) -> str:
    return ('<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">\n' + "\n".join(body) + "\n</svg>\n")


def diagram_svg(diagrams: Sequence[PersistenceDiagram] | PersistenceDiagram,
                title: str = "") -> str:
    """Birth/death scatter with the diagonal; one marker style per degree."""
    if isinstance(diagrams, PersistenceDiagram):
        diagrams = [diagrams]
    vals = np.concatenate([np.r_[d.births, d.deaths] for d in diagrams] + [np.zeros(0)])
    if vals.size:
        lo, hi = float(vals.min()), float(vals.max())
    else:
        lo, hi = 0.0, 1.0
    if hi <= lo:
        hi = lo + 1.0
    margin = 0.05 * (hi - lo)
    lo, hi = lo - margin, hi + margin
    sx, sy, body = _axes(lo, hi, lo, hi, "birth", "death")
    body.insert(0, f'<title>{escape(title or "persistence diagram")}</title>')
    body.append(f'<line x1="{_fmt(sx(lo))}" y1="{_fmt(sy(lo))}" x2="{_fmt(sx(hi))}" '
                f'y2="{_fmt(sy(hi))}" stroke="#888888" stroke-dasharray="4 3"/>')
    for d in diagrams:
        shape, color = _MARKERS.get(d.degree, ("circle", "#0033aa"))
        xs, ys = sx(d.births), sy(d.deaths)
        if shape == "circle":
            pts = [f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="2.5"/>' for x, y in zip(xs, ys)]
        else:
            pts = [f'<path d="M{_fmt(x)} {_fmt(y - 3)}L{_fmt(x - 3)} {_fmt(y + 2.5)}'
                   f'L{_fmt(x + 3)} {_fmt(y + 2.5)}Z"/>' for x, y in zip(xs, ys)]
        body.append(f'<g fill="{color}" fill-opacity="0.8" data-degree="{d.degree}">')
        body.extend(pts)
        body.append("</g>")
    return _document(body)


def report_svg(report: OrderStatReport, bins: int = 30) -> str:
    """One histogram panel per order statistic with the observed value marked."""
    J = report.observed.size
    pw, ph = 260, 200
    w, h = pw * min(J, 3), ph * ((J + 2) // 3)
    body = ["<title>order statistics against replicates</title>"]
    for j in range(J):
        null = report.null[:, j] if report.null is not None else np.zeros(0)
        obs = float(report.observed[j])
        lo = float(min(null.min(), obs)) if null.size else 0.0
        hi = float(max(null.max(), obs)) if null.size else 1.0
        if hi <= lo:
            hi = lo + 1.0
        counts, edges = np.histogram(null, bins=bins, range=(lo, hi))
        top = max(int(counts.max()) if counts.size else 1, 1)
        ox, oy = pw * (j % 3), ph * (j // 3)
        inner_w, inner_h = pw - 40, ph - 50
        body.append(f'<g transform="translate({ox},{oy})">')
        body.append(f'<text x="{pw / 2}" y="16" text-anchor="middle" font-size="12">'
                    f'T_{j + 1}  p={report.pvalues[j]:.4f}</text>')
        for c, e0, e1 in zip(counts, edges[:-1], edges[1:]):
            if c == 0:
                continue
            x = 20 + (e0 - lo) / (hi - lo) * inner_w
            bw = (e1 - e0) / (hi - lo) * inner_w
            bh = c / top * inner_h
            body.append(f'<rect x="{_fmt(x)}" y="{_fmt(30 + inner_h - bh)}" width="{_fmt(bw)}" '
                        f'height="{_fmt(bh)}" fill="#7799cc"/>')
        xo = 20 + (obs - lo) / (hi - lo) * inner_w
        body.append(f'<line x1="{_fmt(xo)}" y1="28" x2="{_fmt(xo)}" y2="{30 + inner_h}" '
                    'stroke="#cc0000" stroke-width="2"/>')
        body.append(f'<line x1="20" y1="{30 + inner_h}" x2="{20 + inner_w}" y2="{30 + inner_h}" '
                    'stroke="#444444"/>')
        body.append(f'<text x="20" y="{ph - 6}" font-size="9">{lo:.3g}</text>')
        body.append(f'<text x="{20 + inner_w}" y="{ph - 6}" font-size="9" text-anchor="end">{hi:.3g}</text>')
        body.append("</g>")
    return _document(body, w, h)


def emit_svg(obj, path, title: str = "") -> None:
    """Write a diagram (or list of diagrams) or an OrderStatReport as SVG."""
    if isinstance(obj, OrderStatReport):
        text = report_svg(obj)
    else:
        text = diagram_svg(obj, title)
    Path(path).write_text(text, encoding="utf-8")
