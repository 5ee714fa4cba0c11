"""Static SVG figures written without a plotting library."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

W, H = 480, 320
PAD = 48


def _svg(body: list, width: int = W, height: int = H) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>\n"])


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _axes(x0, x1, y0, y1, xlabel, ylabel, title, logx=False, logy=False) -> list:
    body = [
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD / 2}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD / 2}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" text-anchor="middle">{escape(ylabel)}</text>',
        f'<text x="{W / 2}" y="16" text-anchor="middle" font-weight="bold">{escape(title)}</text>',
    ]
    for v, anchor, pos in ((x0, "start", PAD), (x1, "end", W - PAD / 2)):
        lab = f"{10**v:.3g}" if logx else f"{v:.3g}"
        body.append(f'<text x="{pos}" y="{H - PAD + 14}" text-anchor="{anchor}">{lab}</text>')
    for v, pos in ((y0, H - PAD), (y1, PAD / 2 + 8)):
        lab = f"{10**v:.3g}" if logy else f"{v:.3g}"
        body.append(f'<text x="{PAD - 4}" y="{pos}" text-anchor="end">{lab}</text>')
    return body


def _scale(v, lo, hi, a, b):
    if hi == lo:
        return (a + b) / 2 + 0 * v
    return a + (v - lo) / (hi - lo) * (b - a)


def line_plot(xs, series: dict, path, title="", xlabel="x", ylabel="y", logx=False, logy=False) -> Path:
    """Polylines with markers; ``series`` maps a label to y values."""
    xs = np.asarray(xs, dtype=float)
    tx = np.log10(xs) if logx else xs
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    ty = {k: (np.log10(np.maximum(v, 1e-300)) if logy else v) for k, v in ys.items()}
    allv = np.concatenate(list(ty.values()))
    x0, x1 = float(np.min(tx)), float(np.max(tx))
    y0, y1 = float(np.min(allv)), float(np.max(allv))
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    body = _axes(x0, x1, y0, y1, xlabel, ylabel, title, logx, logy)
    colors = ["#1f4e99", "#b33", "#2a7", "#a60", "#639"]
    for i, (k, v) in enumerate(ty.items()):
        c = colors[i % len(colors)]
        px = _scale(tx, x0, x1, PAD + 6, W - PAD / 2 - 6)
        py = _scale(v, y0, y1, H - PAD - 6, PAD / 2 + 6)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        body += [f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{c}"/>' for a, b in zip(px, py)]
        body.append(f'<text x="{W - PAD}" y="{PAD / 2 + 14 * (i + 1)}" fill="{c}" text-anchor="end">{escape(k)}</text>')
    path = Path(path)
    path.write_text(_svg(body))
    return path


def waterfall(x, rho: np.ndarray, path, title="density", every: int | None = None) -> Path:
    """Stacked 1D density profiles, one per shown time slice, offset upwards."""
    x = np.asarray(x, dtype=float)
    rho = np.asarray(rho, dtype=float)
    nt = rho.shape[0] - 1
    every = every or max(1, nt // 8)
    shown = list(range(0, nt + 1, every))
    if shown[-1] != nt:
        shown.append(nt)
    top = float(np.max(rho[np.isfinite(rho)])) or 1.0
    step = 0.35 * top
    y1 = top + step * (len(shown) - 1)
    body = _axes(float(x[0]), float(x[-1]), 0.0, y1, "x", "density (offset by time)", title)
    for i, n in enumerate(shown):
        px = _scale(x, x[0], x[-1], PAD + 2, W - PAD / 2 - 2)
        py = _scale(rho[n] + step * i, 0.0, y1, H - PAD, PAD / 2)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        shade = int(40 + 160 * i / max(len(shown) - 1, 1))
        body.append(f'<polyline points="{pts}" fill="none" stroke="rgb(30,{shade},{255 - shade})"/>')
    path = Path(path)
    path.write_text(_svg(body))
    return path


def heatmap(values: np.ndarray, path, title="") -> Path:
    """2D field as a grid of grey rectangles (first axis left to right)."""
    v = np.asarray(values, dtype=float)
    nx, ny = v.shape
    finite = v[np.isfinite(v)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    size = min((W - 2 * PAD) / nx, (H - 2 * PAD) / ny)
    body = [f'<text x="{W / 2}" y="16" text-anchor="middle" font-weight="bold">{escape(title)}</text>']
    for i in range(nx):
        for j in range(ny):
            t = 0.0 if hi == lo or not np.isfinite(v[i, j]) else (v[i, j] - lo) / (hi - lo)
            c = int(255 * (1 - t))
            body.append(
                f'<rect x="{_fmt(PAD + i * size)}" y="{_fmt(H - PAD - (j + 1) * size)}" '
                f'width="{_fmt(size)}" height="{_fmt(size)}" fill="rgb({c},{c},{c})"/>'
            )
    body.append(f'<text x="{PAD}" y="{H - PAD + 14}">min {lo:.3g}  max {hi:.3g}</text>')
    path = Path(path)
    path.write_text(_svg(body))
    return path
