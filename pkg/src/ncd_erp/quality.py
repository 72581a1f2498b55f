"""Silhouette Coefficients over 2-D projections and over dendrograms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

EUCLIDEAN = "euclidean"
DENDROGRAM = "dendrogram-path"


@dataclass(frozen=True)
class SilhouetteReport:
    per_object: tuple[tuple[str, str, float], ...]
    overall: float
    variant: str
    flagged: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "overall": self.overall,
            "flagged": list(self.flagged),
            "per_object": [{"id": i, "label": lab, "s": s} for i, lab, s in self.per_object],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def silhouette_values(dist: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-object ``s(i)`` and a mask of objects whose score was forced to 0.

    ``a(i)`` averages over the other members of i's class, ``b(i)`` takes the
    smallest class-mean distance to any other class. Singletons and
    ``a = b = 0`` get ``s = 0`` and are flagged.
    """
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two classes")
    n = len(labels)
    masks = {c: labels == c for c in classes}
    s = np.zeros(n)
    flagged = np.zeros(n, dtype=bool)
    for i in range(n):
        own = masks[labels[i]]
        k = int(own.sum()) - 1
        if k == 0:
            flagged[i] = True
            continue
        a = (dist[i, own].sum() - dist[i, i]) / k
        b = min(dist[i, masks[c]].mean() for c in classes if c != labels[i])
        top = max(a, b)
        if top == 0:
            flagged[i] = True
            continue
        s[i] = (b - a) / top
    return s, flagged


def _report(ids, labels, dist, variant) -> SilhouetteReport:
    s, flagged = silhouette_values(dist, labels)
    per = tuple((str(i), str(lab), float(v)) for i, lab, v in zip(ids, labels, s))
    return SilhouetteReport(per, float(s.mean()), variant, tuple(str(i) for i, f in zip(ids, flagged) if f))


def euclidean_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def silhouette_euclidean(p) -> SilhouetteReport:
    return _report(p.ids, p.labels, euclidean_distances(p.points), EUCLIDEAN)


def leaf_node_distances(tree) -> np.ndarray:
    """Intermediate nodes on each leaf-to-leaf path (so sibling leaves are 1 apart)."""
    d = tree.leaf_path_edges() - 1
    np.fill_diagonal(d, 0)
    return d.astype(np.float64)


def silhouette_dendrogram(tree, labels) -> SilhouetteReport:
    """``labels`` maps each leaf id to its class."""
    missing = [i for i in tree.ids if i not in labels]
    if missing:
        raise ValueError(f"unlabeled leaves: {missing}")
    labs = [labels[i] for i in tree.ids]
    return _report(tree.ids, labs, leaf_node_distances(tree), DENDROGRAM)
