"""SVG figures plus CSV/JSON data for experiment results.

Figures are written by hand so the bytes depend only on the data.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import harness, ingest, mqtc

VIRIDIS = ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"]
CLASS_COLORS = {"P300": "#1f77b4", "NonP300": "#222222"}


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def color(t: float) -> str:
    """Viridis-like colour for ``t`` in [0, 1] (linear between five anchors)."""
    t = min(1.0, max(0.0, t))
    pos = t * (len(VIRIDIS) - 1)
    i = min(int(pos), len(VIRIDIS) - 2)
    f = pos - i
    a = [int(VIRIDIS[i][k : k + 2], 16) for k in (1, 3, 5)]
    b = [int(VIRIDIS[i + 1][k : k + 2], 16) for k in (1, 3, 5)]
    return "#" + "".join(f"{round(x + f * (y - x)):02x}" for x, y in zip(a, b))


def _normalizer(values):
    vals = [v for v in values if v is not None]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    span = hi - lo
    return lambda v: 0.5 if span == 0 else (v - lo) / span


class _Svg:
    def __init__(self, width: int, height: int, title: str):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f"<title>{escape(title)}</title>",
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        ]

    def add(self, element: str) -> None:
        self.parts.append(element)

    def line(self, x1, y1, x2, y2, stroke="black", width=1.0):
        self.add(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}" stroke-width="{_num(width)}"/>'
        )

    def rect(self, x, y, w, h, fill="none", stroke="none", width=1.0):
        self.add(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(w)}" height="{_num(h)}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="{_num(width)}"/>'
        )

    def circle(self, cx, cy, r, fill="none", stroke="black", width=1.0):
        self.add(
            f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(r)}" fill="{fill}" '
            f'stroke="{stroke}" stroke-width="{_num(width)}"/>'
        )

    def text(self, x, y, s, size=10, anchor="middle"):
        self.add(
            f'<text x="{_num(x)}" y="{_num(y)}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}">{escape(str(s))}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


# -- electrode figures ------------------------------------------------------------

def boxplot_svg(table: harness.ElectrodeScoreTable) -> str:
    names = list(table.electrodes)
    all_vals = [v for n in names for v in table.values[n]]
    lo, hi = min(all_vals), max(all_vals)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    step = 28
    left, top, plot_h = 50, 30, 260
    svg = _Svg(left + step * len(names) + 20, top + plot_h + 60, "Silhouette Coefficient per electrode")

    def y(v):
        return top + plot_h * (hi - v) / (hi - lo)

    svg.line(left, top, left, top + plot_h)
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        svg.text(left - 4, y(v) + 3, f"{v:.2f}", 9, "end")
    for k, name in enumerate(names):
        vals = np.asarray(table.values[name])
        q1, q3 = table.quartiles(name)
        med = table.median(name)
        cx = left + step * k + step / 2
        svg.line(cx, y(vals.max()), cx, y(q3))
        svg.line(cx, y(q1), cx, y(vals.min()))
        svg.rect(cx - 9, y(q3), 18, max(y(q1) - y(q3), 0.5), fill="#c6dbef", stroke="black")
        svg.line(cx - 9, y(med), cx + 9, y(med), stroke="#d62728", width=2)
        svg.text(cx, top + plot_h + 16, name, 9)
    return svg.render()


def scalp_svg(table: harness.ElectrodeScoreTable) -> str:
    montage = ingest.load_montage()
    unknown = [n for n in table.electrodes if n not in montage]
    if unknown:
        raise ValueError(f"no scalp position for electrodes {unknown}")
    size, radius = 360, 130
    cx = cy = size / 2
    svg = _Svg(size, size, "Median Silhouette Coefficient across the scalp")
    svg.circle(cx, cy, radius, stroke="black", width=2)
    svg.add(
        f'<polygon points="{_num(cx - 12)},{_num(cy - radius + 2)} {_num(cx)},{_num(cy - radius - 16)} '
        f'{_num(cx + 12)},{_num(cy - radius + 2)}" fill="none" stroke="black" stroke-width="2"/>'
    )
    medians = {n: table.median(n) for n in table.electrodes}
    norm = _normalizer(medians.values())
    for name in table.electrodes:
        x, y = montage[name]
        px, py = cx + x * radius, cy - y * radius
        svg.circle(px, py, 9, fill=color(norm(medians[name])), stroke="black", width=0.5)
        svg.text(px, py + 19, name, 8)
    return svg.render()


# -- grid heatmap ----------------------------------------------------------------

def heatmap_svg(grid: harness.GridResult) -> str:
    cell, left, top = 26, 50, 40
    nm, nc = len(grid.m_values), len(grid.c_values)
    svg = _Svg(left + cell * nc + 20, top + cell * nm + 40, "Median SC over (M, C); outlined: best cell")
    norm = _normalizer([v for row in grid.median for v in row])
    for i, m in enumerate(grid.m_values):
        svg.text(left - 6, top + cell * i + cell / 2 + 3, m, 9, "end")
        for j, c in enumerate(grid.c_values):
            v = grid.median[i][j]
            # infeasible cells stay blank
            fill = "white" if v is None else color(norm(v))
            svg.rect(left + cell * j, top + cell * i, cell, cell, fill=fill, stroke="#dddddd", width=0.5)
    for j, c in enumerate(grid.c_values):
        svg.text(left + cell * j + cell / 2, top - 6, c, 9)
    svg.text(left + cell * nc / 2, top - 22, "C (concatenations)", 10)
    svg.text(14, top + cell * nm / 2, "M", 10)
    bm, bc = grid.best
    i, j = grid.m_values.index(bm), grid.c_values.index(bc)
    svg.rect(left + cell * j, top + cell * i, cell, cell, stroke="black", width=3)
    return svg.render()


# -- dendrogram and projection ------------------------------------------------------

def equal_angle_layout(tree: mqtc.QuartetTree) -> np.ndarray:
    """Unrooted equal-angle layout: each subtree gets a wedge proportional to its leaves."""
    m = len(tree.adj)
    pos = np.zeros((m, 2))
    root = tree.n
    leaves_below = {}

    def count(v, came):
        if v < tree.n:
            leaves_below[(v, came)] = 1
            return 1
        total = sum(count(w, v) for w in tree.neighbors(v) if w != came)
        leaves_below[(v, came)] = total
        return total

    count(root, -1)
    stack = [(root, -1, 0.0, 2 * math.pi)]
    while stack:
        v, came, start, wedge = stack.pop()
        kids = [w for w in tree.neighbors(v) if w != came]
        total = sum(leaves_below[(w, v)] for w in kids)
        a = start
        for w in kids:
            share = wedge * leaves_below[(w, v)] / total
            mid = a + share / 2
            pos[w] = pos[v] + (math.cos(mid), math.sin(mid))
            stack.append((w, v, a, share))
            a += share
    return pos


def _fit(points: np.ndarray, size: int, pad: int):
    lo = points.min(axis=0)
    span = max(float((points.max(axis=0) - lo).max()), 1e-12)
    scale = (size - 2 * pad) / span
    return lambda p: (pad + (p[0] - lo[0]) * scale, size - pad - (p[1] - lo[1]) * scale)


def dendrogram_svg(tree: mqtc.QuartetTree, labels: dict[str, str], title: str = "Dendrogram") -> str:
    size = 520
    pos = equal_angle_layout(tree)
    to_px = _fit(pos, size, 50)
    svg = _Svg(size, size, title)
    for v, w in tree.edges():
        svg.line(*to_px(pos[v]), *to_px(pos[w]), stroke="#555555")
    for i, ident in enumerate(tree.ids):
        x, y = to_px(pos[i])
        svg.circle(x, y, 6, fill=CLASS_COLORS.get(labels.get(ident), "#999999"), stroke="white")
        svg.text(x, y - 9, ident, 8)
    return svg.render()


def projection_svg(ids, labels, points, title: str = "Projection") -> str:
    size = 520
    pts = np.asarray(points, dtype=float)
    to_px = _fit(pts, size, 40)
    svg = _Svg(size, size, title)
    for ident, lab, p in zip(ids, labels, pts):
        x, y = to_px(p)
        svg.circle(x, y, 7, fill=CLASS_COLORS.get(lab, "#999999"), stroke="black", width=0.5)
        svg.text(x, y - 10, ident, 8)
    return svg.render()


# -- dispatch -------------------------------------------------------------------

def _run_files(data: dict, stem: str, out: Path) -> dict[Path, str]:
    tree = mqtc.QuartetTree.from_newick(data["newick"])
    labels = dict(zip(data["ids"], data["labels"]))
    d_sc = data["dendrogram_sc"]["overall"]
    p_sc = data["projection_sc"]["overall"]
    title = f"M={data['m']} C={data['c']}"
    rows = ["id,label,x,y"] + [
        f"{i},{lab},{repr(float(x))},{repr(float(y))}" for i, lab, (x, y) in zip(data["ids"], data["labels"], data["points"])
    ]
    return {
        out / f"{stem}_dendrogram.svg": dendrogram_svg(tree, labels, f"{title} dendrogram SC={d_sc:.4f}"),
        out / f"{stem}_projection.svg": projection_svg(
            data["ids"], data["labels"], data["points"], f"{title} projection SC={p_sc:.4f}"
        ),
        out / f"{stem}_tree.nwk": data["newick"] + "\n",
        out / f"{stem}_projection.csv": "\n".join(rows) + "\n",
    }


def render_files(data: dict, out_dir, stem: str = "result") -> dict[Path, str]:
    """Figure and data files for one result document, keyed by output path."""
    out = Path(out_dir)
    kind = data.get("kind")
    if kind == "electrode_scores":
        table = harness.ElectrodeScoreTable.from_dict(data)
        if not table.electrodes:
            raise ValueError("electrode table is empty; nothing rendered")
        return {
            out / f"{stem}_boxplot.svg": boxplot_svg(table),
            out / f"{stem}_scalp.svg": scalp_svg(table),
            out / f"{stem}.csv": table.to_csv(),
        }
    if kind == "grid":
        grid = harness.GridResult.from_dict(data)
        if not any(v is not None for row in grid.median for v in row):
            raise ValueError("grid has no feasible cells; nothing rendered")
        return {out / f"{stem}_heatmap.svg": heatmap_svg(grid), out / f"{stem}.csv": grid.to_csv()}
    if kind == "run":
        if not data.get("ids"):
            raise ValueError("run result holds no objects; nothing rendered")
        return _run_files(data, stem, out)
    if kind == "validation":
        files = {}
        for name, entry in sorted(data["datasets"].items()):
            files.update(render_files(entry["electrode_scores"], out, f"{stem}_{name}_electrodes"))
            if "grid" in entry:
                files.update(render_files(entry["grid"], out, f"{stem}_{name}_grid"))
            files.update(render_files(entry["run"], out, f"{stem}_{name}_run"))
        return files
    raise ValueError(f"unknown result kind {kind!r}")


def render(data: dict, out_dir, stem: str = "result") -> list[Path]:
    """Write every artifact for ``data``; on any failure nothing is written."""
    return harness.write_atomic(render_files(data, out_dir, stem))
