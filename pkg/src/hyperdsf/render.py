"""Static SVG drawing of a ``d = 1`` forest in half-plane coordinates."""

from __future__ import annotations

import numpy as np

from .forest import Forest, UnsupportedDimension

__all__ = ["render_svg"]

WIDTH, HEIGHT, MARGIN = 800, 500, 20


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render_svg(forest: Forest, ymax: float | None = None) -> str:
    """Points and Euclidean edges; the ordinate axis is linear and clipped at ``ymax``.

    Uncertified vertices are drawn hollow and their edges dashed.
    """
    if forest.dim != 1:
        raise UnsupportedDimension(f"rendering needs d = 1, got d = {forest.dim}")
    w = forest.cloud.window
    c = forest.cloud.center[0]
    top = w.y_hi if ymax is None else min(float(ymax), w.y_hi)
    pts = forest.points
    parent = np.asarray(forest.parent)
    cert = np.asarray(forest.certified)
    sx = (WIDTH - 2 * MARGIN) / (2 * w.R)
    sy = (HEIGHT - 2 * MARGIN) / (top - 0.0)

    def px(x: float) -> str:
        return _fmt(MARGIN + (x - c + w.R) * sx)

    def py(y: float) -> str:
        return _fmt(HEIGHT - MARGIN - y * sy)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<style>.e{stroke:#1f3b73;stroke-width:0.6}.u{stroke:#b03a2e;stroke-width:0.6;stroke-dasharray:3 2}'
        ".v{fill:#1f3b73}.c{fill:none;stroke:#b03a2e;stroke-width:0.8}</style>",
        f'<rect class="frame" x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="#999"/>',
    ]
    shown = pts[:, -1] <= top
    for i in np.flatnonzero(shown & (parent >= 0)):
        p = parent[i]
        x2, y2 = pts[p]
        if y2 > top:
            # clip the edge at the top of the figure
            frac = (top - pts[i, 1]) / (y2 - pts[i, 1])
            x2, y2 = pts[i, 0] + frac * (x2 - pts[i, 0]), top
        cls = "e" if cert[i] else "u"
        lines.append(f'<line class="{cls}" x1="{px(pts[i, 0])}" y1="{py(pts[i, 1])}" x2="{px(x2)}" y2="{py(y2)}"/>')
    for i in np.flatnonzero(shown):
        cls = "v" if cert[i] else "c"
        lines.append(f'<circle class="{cls}" cx="{px(pts[i, 0])}" cy="{py(pts[i, 1])}" r="1.5"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
