"""Stacked-area SVG rendering of a hypnodensity.

Color code: white = wake, red = N1, light blue = N2, dark blue = N3,
black = REM.  The x axis is in hours.  Output is deterministic byte-for-byte
for a given input.
"""

from __future__ import annotations

import numpy as np

from .hypnodensity import Hypnodensity
from .signal_io import STAGES

STAGE_COLORS = {
    "W": "#ffffff",
    "N1": "#e03030",
    "N2": "#a8d0f0",
    "N3": "#1a3a8a",
    "REM": "#000000",
}

WIDTH = 960
HEIGHT = 300
MARGIN_L = 50
MARGIN_B = 30
MARGIN_T = 10
MARGIN_R = 10


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def hypnodensity_svg(hd: Hypnodensity) -> str:
    """Render the stacked stage probabilities as an SVG 1.1 document."""
    probs = np.asarray(hd.probs, dtype=float)
    n = len(probs)
    hours = n * hd.resolution_s / 3600.0
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    xs = MARGIN_L + np.arange(n) / max(n - 1, 1) * plot_w
    cum = np.cumsum(probs, axis=1)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>\n',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#f8f8f8"/>\n',
    ]
    lower = np.zeros(n)
    for k, stage in enumerate(STAGES):
        upper = cum[:, k]
        pts = []
        for x, u in zip(xs, upper):
            pts.append(f"{_fmt(x)},{_fmt(MARGIN_T + plot_h * (1 - u))}")
        for x, lo in zip(xs[::-1], lower[::-1]):
            pts.append(f"{_fmt(x)},{_fmt(MARGIN_T + plot_h * (1 - lo))}")
        parts.append(
            f'<path class="stage-area" fill="{STAGE_COLORS[stage]}" '
            f'stroke="none" d="M {" L ".join(pts)} Z"><title>{stage}</title></path>\n'
        )
        lower = upper
    # hour ticks
    n_ticks = max(int(np.floor(hours)) + 1, 2)
    for t in range(n_ticks):
        if hours > 0:
            x = MARGIN_L + (t / hours) * plot_w if t <= hours else None
        else:
            x = MARGIN_L if t == 0 else None
        if x is None or x > WIDTH - MARGIN_R + 1e-9:
            continue
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{MARGIN_T + plot_h}" x2="{_fmt(x)}" '
            f'y2="{MARGIN_T + plot_h + 5}" stroke="#333333"/>\n'
            f'<text x="{_fmt(x)}" y="{MARGIN_T + plot_h + 18}" '
            f'font-size="10" text-anchor="middle" fill="#333333">{t}h</text>\n'
        )
    parts.append(
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#333333"/>\n'
    )
    parts.append("</svg>\n")
    return "".join(parts)
