"""Hand-written SVG for the metric-vs-NFE sweep (four panels, log NFE axis)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .errors import PlotInputError

SWEEP_COLUMNS = ("method", "nfe", "dtw", "wasserstein", "mmd2", "spec_sim", "wall_ms")
PANELS = (
    ("dtw", "DTW (lower is better)"),
    ("wasserstein", "Wasserstein (lower is better)"),
    ("mmd2", "MMD^2 (lower is better)"),
    ("spec_sim", "Spectral similarity (higher is better)"),
)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
LABELS = {"fm": "flow matching", "ddpm": "diffusion (DDPM)"}

PANEL_W, PANEL_H = 380, 270
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 16, 34, 42


def read_sweep(path) -> list[dict]:
    """Parse sweep.csv. Errors carry the 1-based line number."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotInputError("empty sweep CSV", line=1)
    header = [h.strip() for h in rows[0]]
    if tuple(header) != SWEEP_COLUMNS:
        raise PlotInputError(f"expected header {','.join(SWEEP_COLUMNS)}, got {','.join(header)}", line=1)
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(SWEEP_COLUMNS):
            raise PlotInputError(f"expected {len(SWEEP_COLUMNS)} fields, got {len(row)}", line=lineno)
        try:
            rec = {"method": row[0], "nfe": int(row[1])}
            for name, cell in zip(SWEEP_COLUMNS[2:], row[2:]):
                rec[name] = float(cell)
        except ValueError as exc:
            raise PlotInputError(str(exc), line=lineno) from None
        if rec["nfe"] < 1:
            raise PlotInputError(f"nfe must be positive, got {rec['nfe']}", line=lineno)
        if not all(math.isfinite(rec[k]) for k, _ in PANELS):
            raise PlotInputError("non-finite metric value", line=lineno)
        records.append(rec)
    if not records:
        raise PlotInputError("sweep CSV has a header but no data rows", line=1)
    return records


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    mag = abs(v)
    if mag >= 100:
        return f"{v:.0f}"
    if mag >= 1:
        return f"{v:.2f}"
    return f"{v:.3g}"


def render_sweep_svg(records: list[dict]) -> str:
    methods = sorted({r["method"] for r in records}, key=lambda m: (m not in LABELS, list(LABELS).index(m) if m in LABELS else 0, m))
    nfes = sorted({r["nfe"] for r in records})
    lo, hi = math.log10(nfes[0]), math.log10(nfes[-1])
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    width, height = 2 * PANEL_W, 2 * PANEL_H + 40
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for p, (metric, title) in enumerate(PANELS):
        ox, oy = (p % 2) * PANEL_W, (p // 2) * PANEL_H
        x0, x1 = ox + MARGIN_L, ox + PANEL_W - MARGIN_R
        y0, y1 = oy + MARGIN_T, oy + PANEL_H - MARGIN_B
        vals = [r[metric] for r in records]
        vmin, vmax = min(vals), max(vals)
        pad = (vmax - vmin) * 0.05 or max(abs(vmax) * 0.05, 1e-12)
        vmin, vmax = vmin - pad, vmax + pad

        def sx(n):
            return x0 + (math.log10(n) - lo) / (hi - lo) * (x1 - x0)

        def sy(v):
            return y1 - (v - vmin) / (vmax - vmin) * (y1 - y0)

        out.append(f'<g id="panel-{metric}">')
        out.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="{oy + 20}" text-anchor="middle" font-size="13">{title}</text>')
        out.append(f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" fill="none" stroke="#444"/>')
        for n in nfes:
            x = _fmt(sx(n))
            out.append(f'<line x1="{x}" y1="{y1}" x2="{x}" y2="{y1 + 4}" stroke="#444"/>')
            out.append(f'<text x="{x}" y="{y1 + 16}" text-anchor="middle">{n}</text>')
        for k in range(5):
            v = vmin + (vmax - vmin) * k / 4
            y = _fmt(sy(v))
            out.append(f'<line x1="{x0 - 4}" y1="{y}" x2="{x0}" y2="{y}" stroke="#444"/>')
            out.append(f'<text x="{x0 - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">{_tick_label(v)}</text>')
        out.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="{y1 + 32}" text-anchor="middle">NFE (log scale)</text>')
        for i, method in enumerate(methods):
            pts = sorted((r["nfe"], r[metric]) for r in records if r["method"] == method)
            coords = " ".join(f"{_fmt(sx(n))},{_fmt(sy(v))}" for n, v in pts)
            color = COLORS[i % len(COLORS)]
            out.append(f'<polyline data-method="{method}" points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            for n, v in pts:
                out.append(f'<circle cx="{_fmt(sx(n))}" cy="{_fmt(sy(v))}" r="2.5" fill="{color}"/>')
        out.append("</g>")
    ly = 2 * PANEL_H + 20
    out.append('<g id="legend">')
    for i, method in enumerate(methods):
        lx = 40 + 220 * i
        color = COLORS[i % len(COLORS)]
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 34}" y="{ly}" dominant-baseline="middle">{LABELS.get(method, method)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_sweep_plot(sweep_csv, svg_path) -> None:
    Path(svg_path).write_text(render_sweep_svg(read_sweep(sweep_csv)), encoding="utf-8")
