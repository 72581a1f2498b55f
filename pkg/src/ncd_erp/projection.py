"""Nearest-neighbour 2-D projection of a distance matrix."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SWEEPS = 50
ALPHA0 = 0.3


@dataclass(frozen=True, eq=False)
class Projection2D:
    ids: tuple[str, ...]
    labels: tuple[str, ...]
    points: np.ndarray
    stress_trace: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", tuple(self.labels))
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (len(self.ids), 2) or len(self.labels) != len(self.ids):
            raise ValueError("projection needs one (x, y) point and one label per id")
        if not np.all(np.isfinite(pts)):
            raise ValueError("projection coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "stress_trace", tuple(self.stress_trace))


def _place(c1, r1, c2, r2, rng):
    """Intersection of two circles, or the radius-weighted point between the centres."""
    delta = c2 - c1
    dist = math.hypot(delta[0], delta[1])
    if dist == 0.0:
        return c1 + np.array([r1, 0.0])
    if abs(r1 - r2) <= dist <= r1 + r2:
        u = delta / dist
        a = (r1 * r1 - r2 * r2 + dist * dist) / (2.0 * dist)
        h2 = r1 * r1 - a * a
        base = c1 + a * u
        if h2 <= 0.0:
            return base
        perp = np.array([-u[1], u[0]])
        sign = 1.0 if rng.integers(2) else -1.0
        return base + sign * math.sqrt(h2) * perp
    total = r1 + r2
    if total == 0.0:
        return c1.copy()
    return c1 + (r1 / total) * delta


def place(d: np.ndarray, rng) -> np.ndarray:
    """Incremental placement in input order against the two nearest placed points."""
    n = len(d)
    pts = np.zeros((n, 2))
    pts[1, 0] = d[0, 1]
    for q in range(2, n):
        # stable sort: equal distances resolve to the lower index
        near = np.argsort(d[q, :q], kind="stable")[:2]
        i, j = int(near[0]), int(near[1])
        pts[q] = _place(pts[i], d[q, i], pts[j], d[q, j], rng)
    return pts


def _touching_stress(pts, d, i, j):
    """Stress terms of every pair that involves ``i`` or ``j``, each counted once."""
    di = np.hypot(*(pts - pts[i]).T) - d[i]
    dj = np.hypot(*(pts - pts[j]).T) - d[j]
    di[i] = 0.0
    dj[j] = 0.0
    dj[i] = 0.0
    return di @ di + dj @ dj


def relax(pts: np.ndarray, d: np.ndarray, sweeps: int, rng) -> list[float]:
    """Pairwise relaxation sweeps in place.

    Returns the stress before the first sweep followed by the stress after
    each sweep.

    Each pair move shifts both points along their connecting line by half of
    ``alpha * (planar - target)``; a move is kept only if it does not raise
    the total stress, so the returned sequence never increases.
    """
    n = len(d)
    iu, ju = np.triu_indices(n, k=1)
    norm = float(d[iu, ju] @ d[iu, ju])
    trace = [_stress(pts, d, norm)]
    for k in range(sweeps):
        alpha = ALPHA0 * (1.0 - k / sweeps)
        for p in rng.permutation(len(iu)):
            i, j = int(iu[p]), int(ju[p])
            delta = pts[j] - pts[i]
            plane = math.hypot(delta[0], delta[1])
            if plane == 0.0:
                continue
            step = alpha * (plane - d[i, j]) / 2.0
            if step == 0.0:
                continue
            before = _touching_stress(pts, d, i, j)
            old_i, old_j = pts[i].copy(), pts[j].copy()
            move = step * delta / plane
            pts[i] += move
            pts[j] -= move
            after = _touching_stress(pts, d, i, j)
            if after > before:
                pts[i], pts[j] = old_i, old_j
        trace.append(_stress(pts, d, norm))
    return trace


def _stress(pts, d, norm=None) -> float:
    iu, ju = np.triu_indices(len(d), k=1)
    target = d[iu, ju]
    plane = np.hypot(*(pts[iu] - pts[ju]).T)
    num = float(((plane - target) ** 2).sum())
    den = float(target @ target) if norm is None else norm
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def project(m, refine_iters: int = DEFAULT_SWEEPS, seed: int = 0) -> Projection2D:
    n = len(m.ids)
    if n < 2:
        raise ValueError("projection needs at least 2 objects")
    d = m.off_diagonal()
    rng = np.random.default_rng(seed)
    pts = place(d, rng)
    trace = relax(pts, d, refine_iters, rng) if n > 2 else [_stress(pts, d)]
    return Projection2D(m.ids, m.labels, pts, trace)


def stress(p: Projection2D, m) -> float:
    """Normalized stress: sum of squared distance errors over sum of squared targets."""
    if tuple(p.ids) != tuple(m.ids):
        raise ValueError("projection ids are not aligned with the distance matrix")
    return _stress(p.points, m.off_diagonal())


def write_projection(p: Projection2D, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", "x", "y"])
    for ident, label, (x, y) in zip(p.ids, p.labels, p.points):
        w.writerow([ident, label, repr(float(x)), repr(float(y))])
    Path(path).write_text(buf.getvalue())


def read_projection(path) -> Projection2D:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    return Projection2D(
        [r["id"] for r in rows],
        [r["label"] for r in rows],
        [[float(r["x"]), float(r["y"])] for r in rows],
    )
