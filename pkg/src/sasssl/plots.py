"""Minimal SVG line and scatter charts (no plotting dependency)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22"]
WIDTH, HEIGHT = 560, 420
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 40, 50


def _num(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1
        self.w = WIDTH - LEFT - RIGHT
        self.h = HEIGHT - TOP - BOTTOM

    def px(self, x):
        return LEFT + (np.asarray(x, dtype=float) - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return TOP + self.h - (np.asarray(y, dtype=float) - self.y0) / (self.y1 - self.y0) * self.h


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_num(LEFT + ax.w / 2)}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{ax.w}" height="{ax.h}" fill="none" stroke="black"/>',
    ]
    for t in np.linspace(0, 1, 6):
        xv = ax.x0 + t * (ax.x1 - ax.x0)
        yv = ax.y0 + t * (ax.y1 - ax.y0)
        x, y = float(ax.px(xv)), float(ax.py(yv))
        out.append(f'<line x1="{_num(x)}" y1="{TOP + ax.h}" x2="{_num(x)}" y2="{TOP + ax.h + 4}" stroke="black"/>')
        out.append(f'<text x="{_num(x)}" y="{TOP + ax.h + 16}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<line x1="{LEFT - 4}" y1="{_num(y)}" x2="{LEFT}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_num(y + 4)}" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{_num(LEFT + ax.w / 2)}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{_num(TOP + ax.h / 2)}" text-anchor="middle" transform="rotate(-90 16 {_num(TOP + ax.h / 2)})">{escape(ylabel)}</text>'
    )
    return out


def _legend(labels: list[str], marker: str) -> list[str]:
    out = []
    for i, label in enumerate(labels):
        y = TOP + 10 + 16 * i
        color = PALETTE[i % len(PALETTE)]
        x = WIDTH - RIGHT + 12
        if marker == "line":
            out.append(f'<line x1="{x}" y1="{y}" x2="{x + 18}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        else:
            out.append(f'<circle cx="{x + 9}" cy="{y}" r="4" fill="{color}"/>')
        out.append(f'<text x="{x + 24}" y="{y + 4}">{escape(label)}</text>')
    return out


def line_chart(series, title: str, xlabel: str, ylabel: str, xlim=None, ylim=None, diagonal: bool = False, markers: bool = False) -> str:
    """``series`` is a list of (label, xs, ys)."""
    all_x = np.concatenate([np.asarray(xs, float) for _, xs, _ in series]) if series else np.zeros(1)
    all_y = np.concatenate([np.asarray(ys, float) for _, _, ys in series]) if series else np.zeros(1)
    ax = _Axes(xlim or (all_x.min(), all_x.max()), ylim or (all_y.min(), all_y.max()))
    out = _frame(ax, title, xlabel, ylabel)
    if diagonal:
        out.append(
            f'<line x1="{_num(ax.px(ax.x0))}" y1="{_num(ax.py(ax.y0))}" x2="{_num(ax.px(ax.x1))}" y2="{_num(ax.py(ax.y1))}" stroke="#999" stroke-dasharray="4 3"/>'
        )
    for i, (_, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(ax.px(xs), ax.py(ys)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if markers:
            out.extend(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="3" fill="{color}"/>' for x, y in zip(ax.px(xs), ax.py(ys)))
    out.extend(_legend([label for label, _, _ in series], "line"))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_chart(coords: np.ndarray, labels: np.ndarray, title: str, class_names=("background", "object")) -> str:
    coords = np.asarray(coords, float)
    labels = np.asarray(labels)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    pad = 0.05 * (hi - lo + 1e-12)
    ax = _Axes((lo[0] - pad[0], hi[0] + pad[0]), (lo[1] - pad[1], hi[1] + pad[1]))
    out = _frame(ax, title, "t-SNE 1", "t-SNE 2")
    xs, ys = ax.px(coords[:, 0]), ax.py(coords[:, 1])
    for x, y, lab in zip(xs, ys, labels):
        out.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="2.5" fill="{PALETTE[int(lab) % len(PALETTE)]}" fill-opacity="0.8"/>')
    out.extend(_legend(list(class_names), "dot"))
    out.append("</svg>")
    return "\n".join(out) + "\n"
