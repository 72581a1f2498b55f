"""Compressors and Normalized Compression Distance matrices."""

from __future__ import annotations

import bz2
import csv
import io
import json
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EPS_WARN = 0.1
EPS_FAIL = 0.2


class Compressor:
    """Anything with a ``name`` and a deterministic ``compressed_size(data) -> int``."""

    name = "abstract"

    def compressed_size(self, data: bytes) -> int:
        raise NotImplementedError


class ZlibCompressor(Compressor):
    """Raw DEFLATE stream at level 9; no zlib header or checksum is counted."""

    name = "zlib"

    def compressed_size(self, data: bytes) -> int:
        c = zlib.compressobj(9, zlib.DEFLATED, -15, 9)
        return len(c.compress(data)) + len(c.flush())


class Bz2Compressor(Compressor):
    """bzip2 (Burrows-Wheeler block sorting) at level 9.

    The stream carries a fixed 4-byte magic plus end-of-stream trailer; these
    are counted and cancel approximately in the distance.
    """

    name = "bz2"

    def compressed_size(self, data: bytes) -> int:
        return len(bz2.compress(data, 9))


COMPRESSORS = {"zlib": ZlibCompressor, "bz2": Bz2Compressor}
DEFAULT_COMPRESSOR = "zlib"


def get_compressor(name: str = DEFAULT_COMPRESSOR) -> Compressor:
    try:
        return COMPRESSORS[name]()
    except KeyError:
        raise ValueError(f"unknown compressor {name!r}; choose from {sorted(COMPRESSORS)}") from None


def ncd(x: bytes, y: bytes, c: Compressor | None = None, cx: int | None = None, cy: int | None = None) -> float:
    """Distance of two byte strings; both concatenation orders are compressed.

    ``cx``/``cy`` may carry precomputed single-object sizes.
    """
    if not x or not y:
        raise ValueError("ncd requires non-empty inputs")
    c = c or get_compressor()
    cx = c.compressed_size(x) if cx is None else cx
    cy = c.compressed_size(y) if cy is None else cy
    cxy = c.compressed_size(x + y)
    cyx = c.compressed_size(y + x)
    return max(cxy - cx, cyx - cy) / max(cx, cy)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    ids: tuple[str, ...]
    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", tuple(self.labels))
        v = np.asarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if v.shape != (n, n) or len(self.labels) != n:
            raise ValueError("ids, labels and values disagree in size")
        if len(set(self.ids)) != n:
            raise ValueError("duplicate ids in distance matrix")
        if not np.array_equal(v, v.T):
            raise ValueError("distance matrix must be symmetric")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return self.ids == other.ids and self.labels == other.labels and np.array_equal(self.values, other.values)

    __hash__ = None

    def off_diagonal(self) -> np.ndarray:
        """Copy of ``values`` with a zero diagonal, the form clustering consumes."""
        v = self.values.copy()
        np.fill_diagonal(v, 0.0)
        return v

    def subset(self, idx) -> DistanceMatrix:
        idx = list(idx)
        return DistanceMatrix(
            [self.ids[i] for i in idx], [self.labels[i] for i in idx], self.values[np.ix_(idx, idx)]
        )


def check_range(values: np.ndarray) -> None:
    off = values[~np.eye(len(values), dtype=bool)]
    if off.size == 0:
        return
    lo, hi = off.min(), off.max()
    if lo < 0 or hi > 1 + EPS_FAIL:
        raise ValueError(f"NCD values outside [0, {1 + EPS_FAIL}]: min {lo:.4f}, max {hi:.4f}")
    if hi > 1 + EPS_WARN:
        warnings.warn(f"NCD epsilon {hi - 1:.4f} exceeds {EPS_WARN}", RuntimeWarning, stacklevel=3)


def distance_matrix(objects, c: Compressor | None = None, workers: int = 1) -> DistanceMatrix:
    """All pairwise NCDs, diagonal included.

    Each entry is computed once (upper triangle) and mirrored, so the result
    does not depend on ``workers``.
    """
    objects = list(objects)
    n = len(objects)
    if n < 2:
        raise ValueError("need at least two objects")
    ids = [o.id for o in objects]
    if len(set(ids)) != n:
        raise ValueError("duplicate object ids")
    c = c or get_compressor()
    data = [o.bytes for o in objects]
    sizes = [c.compressed_size(d) for d in data]

    def row(i):
        return [ncd(data[i], data[j], c, sizes[i], sizes[j]) for j in range(i, n)]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(row, range(n)))
    else:
        rows = [row(i) for i in range(n)]
    values = np.zeros((n, n))
    for i, r in enumerate(rows):
        values[i, i:] = r
        values[i:, i] = r
    check_range(values)
    return DistanceMatrix(ids, [o.label for o in objects], values)


def group_distance_summary(m: DistanceMatrix) -> dict:
    """Mean within-class and between-class NCD, diagonal excluded.

    ``intra`` is pooled over every same-class pair; ``diff`` is ``inter - intra``.
    """
    labels = np.asarray(m.labels)
    classes = sorted(set(m.labels))
    if len(classes) < 2:
        raise ValueError("group summary needs at least two classes")
    iu = np.triu_indices(len(m), k=1)
    same = labels[iu[0]] == labels[iu[1]]
    vals = m.values[iu]
    per_class = {}
    for cl in classes:
        mask = same & (labels[iu[0]] == cl)
        per_class[cl] = float(vals[mask].mean()) if mask.any() else float("nan")
    intra = float(vals[same].mean())
    inter = float(vals[~same].mean())
    return {"intra_by_class": per_class, "intra": intra, "inter": inter, "diff": inter - intra}


def write_matrix(m: DistanceMatrix, path) -> Path:
    """CSV with ids as header row/column; labels go to ``<stem>.labels.json``."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(m.ids))
    for i, ident in enumerate(m.ids):
        w.writerow([ident] + [repr(float(v)) for v in m.values[i]])
    path.write_text(buf.getvalue())
    side = labels_path(path)
    side.write_text(json.dumps(dict(zip(m.ids, m.labels)), indent=1) + "\n")
    return side


def labels_path(matrix_path) -> Path:
    p = Path(matrix_path)
    return p.with_name(p.stem + ".labels.json")


def read_matrix(path, labels: dict[str, str] | None = None) -> DistanceMatrix:
    path = Path(path)
    rows = list(csv.reader(path.read_text().splitlines()))
    ids = rows[0][1:]
    if [r[0] for r in rows[1:]] != ids:
        raise ValueError(f"{path}: row ids do not match column ids")
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if labels is None:
        side = labels_path(path)
        labels = json.loads(side.read_text()) if side.exists() else {}
    return DistanceMatrix(ids, [labels.get(i, "") for i in ids], values)
