"""Static SVG plots written by hand: polylines on a framed axis, no plotting stack."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, PAD = 640, 400, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#7f7f7f")


class _Axes:
    def __init__(self, xlim, ylim, equal=False):
        (x0, x1), (y0, y1) = xlim, ylim
        if x1 <= x0:
            x0, x1 = x0 - 1.0, x1 + 1.0
        if y1 <= y0:
            y0, y1 = y0 - 1.0, y1 + 1.0
        self.sx = (WIDTH - 2 * PAD) / (x1 - x0)
        self.sy = (HEIGHT - 2 * PAD) / (y1 - y0)
        if equal:
            self.sx = self.sy = min(self.sx, self.sy)
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.parts: list[str] = []

    def px(self, x, y):
        return PAD + (x - self.x0) * self.sx, HEIGHT - PAD - (y - self.y0) * self.sy

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = [self.px(x, y) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        if len(pts) < 2:
            return
        d = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"{extra}/>')

    def circle(self, x, y, r, color, dash=None):
        cx, cy = self.px(x, y)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r * self.sx:.2f}" '
                          f'fill="none" stroke="{color}"{extra}/>')

    def rect(self, cx, cy, half, color):
        x, y = self.px(cx - half, cy + half)
        s = 2 * half * self.sx
        self.parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{s:.2f}" height="{s:.2f}" '
                          f'fill="{color}" fill-opacity="0.25" stroke="{color}"/>')

    def text(self, x, y, s, anchor="start", size=12):
        self.parts.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" '
                          f'text-anchor="{anchor}" font-family="sans-serif">{escape(s)}</text>')

    def render(self, title, xlabel, ylabel, legend=()):
        frame = (f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" '
                 f'height="{HEIGHT - 2 * PAD}" fill="none" stroke="black"/>')
        self.text(WIDTH / 2, PAD / 2, title, "middle", 14)
        self.text(WIDTH / 2, HEIGHT - 10, xlabel, "middle")
        self.text(12, HEIGHT / 2, ylabel)
        for v in np.linspace(self.x0, self.x1, 5):
            x, _ = self.px(v, self.y0)
            self.text(x, HEIGHT - PAD + 16, f"{v:.2f}", "middle", 10)
        for v in np.linspace(self.y0, self.y1, 5):
            _, y = self.px(self.x0, v)
            self.text(PAD - 4, y + 4, f"{v:.2f}", "end", 10)
        for i, (label, color) in enumerate(legend):
            y = PAD + 14 + 16 * i
            self.parts.append(f'<line x1="{WIDTH - PAD - 110}" y1="{y - 4}" '
                              f'x2="{WIDTH - PAD - 90}" y2="{y - 4}" stroke="{color}" '
                              f'stroke-width="2"/>')
            self.text(WIDTH - PAD - 85, y, label, size=11)
        clip = (f'<clipPath id="plot"><rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" '
                f'height="{HEIGHT - 2 * PAD}"/></clipPath>')
        shapes = [p for p in self.parts if not p.startswith("<text")]
        labels = [p for p in self.parts if p.startswith("<text")]
        return "\n".join([
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>', clip, frame,
            '<g clip-path="url(#plot)">', *shapes, "</g>", *labels, "</svg>", ""])


def trajectory_svg(cols, world_cfg, hierarchy=None) -> str:
    """Top view: planner path, base path, initial and final boxes, safety discs."""
    xs = np.concatenate([cols["base_x"], cols["plan_x"], [world_cfg.goal[0]]])
    ys = np.concatenate([cols["base_y"], cols["plan_y"], [world_cfg.goal[1]]])
    for b in world_cfg.boxes:
        xs = np.append(xs, [b.center[0] - 0.6, b.center[0] + 0.6])
        ys = np.append(ys, [b.center[1] - 0.6, b.center[1] + 0.6])
    xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
    ax = _Axes((xs.min() - 0.1, xs.max() + 0.1), (ys.min() - 0.1, ys.max() + 0.1), equal=True)
    for i, b in enumerate(world_cfg.boxes):
        ax.rect(*b.center, b.half_extent, COLORS[4])
        fx, fy = cols[f"box{i}_x"][-1], cols[f"box{i}_y"][-1]
        if math.isfinite(fx) and (fx, fy) != tuple(b.center):
            ax.rect(fx, fy, b.half_extent, COLORS[3])
    if hierarchy is not None:
        for spec, color in zip(hierarchy.barriers, (COLORS[1], COLORS[2])):
            ax.circle(*spec.center, spec.radius + spec.zeta, color, dash="4 3")
    ax.polyline(cols["plan_x"], cols["plan_y"], COLORS[2], dash="6 3")
    ax.polyline(cols["base_x"], cols["base_y"], COLORS[0])
    gx, gy = ax.px(*world_cfg.goal)
    ax.parts.append(f'<circle cx="{gx:.2f}" cy="{gy:.2f}" r="4" fill="black"/>')
    legend = [("base", COLORS[0]), ("plan", COLORS[2]), ("primary disc", COLORS[1])]
    return ax.render("trajectory", "x [m]", "y [m]", legend)


def barrier_svg(cols) -> str:
    """Barrier values of the planner state over time."""
    t = cols["time"]
    hs = np.concatenate([cols["h1"], cols["h2"], [0.0]])
    hs = hs[np.isfinite(hs)]
    ax = _Axes((float(t.min()), float(t.max())), (float(hs.min()) - 0.05, float(hs.max()) + 0.05))
    ax.polyline([t[0], t[-1]], [0.0, 0.0], "black", width=0.8, dash="2 2")
    ax.polyline(t, cols["h1"], COLORS[1])
    ax.polyline(t, cols["h2"], COLORS[2])
    return ax.render("barrier values", "time [s]", "h", [("h1", COLORS[1]), ("h2", COLORS[2])])
