"""Signal-to-ASCII object construction.

Objects are built per class by shuffling that class's segments, cutting the
shuffled list into groups of ``M`` that are averaged sample-wise, and joining
``C`` consecutive averages into one byte string. Segments are never reused
within a build.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import NON_P300, P300, Segment

BLOCK_SEPARATOR = b"\n"
ASCII_OFFSET = 33
MAX_LEVELS = 94
LABEL_PREFIX = {P300: "p", NON_P300: "n"}


class InsufficientSegmentsError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectConfig:
    m_means: int = 1
    c_concats: int = 1
    quant_levels: int = 64
    clip_sigma: float = 3.0
    rng_seed: int = 0
    max_m: int = 14
    max_c: int = 14

    def __post_init__(self):
        if not 1 <= self.m_means <= self.max_m:
            raise ValueError(f"M={self.m_means} outside 1..{self.max_m}")
        if not 1 <= self.c_concats <= self.max_c:
            raise ValueError(f"C={self.c_concats} outside 1..{self.max_c}")
        if not 2 <= self.quant_levels <= MAX_LEVELS:
            raise ValueError(f"quant_levels must lie in 2..{MAX_LEVELS}")
        if not self.clip_sigma > 0:
            raise ValueError("clip_sigma must be positive")

    @property
    def segments_per_object(self) -> int:
        return self.m_means * self.c_concats


@dataclass(frozen=True)
class AsciiObject:
    bytes: bytes
    label: str
    id: str
    provenance: tuple = field(default=())


def levels(values, cfg: ObjectConfig) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize NaN or infinite values")
    clip = cfg.clip_sigma
    v = np.clip(v, -clip, clip)
    lv = np.floor((v + clip) / (2.0 * clip) * cfg.quant_levels).astype(np.int64)
    return np.minimum(lv, cfg.quant_levels - 1)


def quantize(values, cfg: ObjectConfig) -> bytes:
    """Map each value to one printable byte, ``'!'`` for the lowest level."""
    return (levels(values, cfg) + ASCII_OFFSET).astype(np.uint8).tobytes()


def max_objects(n_segments: int, cfg: ObjectConfig) -> int:
    return n_segments // cfg.segments_per_object


def _class_objects(columns, origins, label, cfg, count, rng):
    """``columns`` holds one (n_segments, length) array per electrode, rows aligned."""
    need = count * cfg.segments_per_object
    have = columns[0].shape[0]
    if have < need:
        raise InsufficientSegmentsError(
            f"{label}: {count} objects at M={cfg.m_means}, C={cfg.c_concats} "
            f"require {need} segments, only {have} available"
        )
    order = rng.permutation(have)[:need]
    m, c = cfg.m_means, cfg.c_concats
    out = []
    for k in range(count):
        chunk = order[k * m * c : (k + 1) * m * c]
        blocks = []
        for j in range(c):
            group = chunk[j * m : (j + 1) * m]
            for col in columns:
                blocks.append(quantize(col[group].mean(axis=0), cfg))
        out.append(
            AsciiObject(
                BLOCK_SEPARATOR.join(blocks),
                label,
                f"{LABEL_PREFIX[label]}{k:03d}",
                tuple(origins[i] for i in chunk),
            )
        )
    return out


def build_objects(segments: list[Segment], cfg: ObjectConfig, per_class_count: int) -> list[AsciiObject]:
    """Build ``per_class_count`` P300 objects followed by as many NonP300 objects."""
    return build_multi_objects([segments], cfg, per_class_count)


def build_multi_objects(
    segments_per_electrode: list[list[Segment]], cfg: ObjectConfig, per_class_count: int
) -> list[AsciiObject]:
    """Objects spanning several electrodes.

    The lists must come from the same recording(s) and be event-aligned; a
    selected event contributes its segment on every electrode. Each of the C
    blocks holds one M-average per electrode, electrode-major within the block.
    """
    if per_class_count < 1:
        raise ValueError("per_class_count must be >= 1")
    if not segments_per_electrode or not segments_per_electrode[0]:
        raise InsufficientSegmentsError("no segments supplied")
    first = segments_per_electrode[0]
    for segs in segments_per_electrode[1:]:
        if len(segs) != len(first) or any(a.origin != b.origin for a, b in zip(segs, first)):
            raise ValueError("electrode segment lists are not event-aligned")
    lengths = {s.values.size for segs in segments_per_electrode for s in segs}
    if len(lengths) != 1:
        raise ValueError("all segments must have the same length")

    rng = np.random.default_rng(cfg.rng_seed)
    out = []
    for label in (P300, NON_P300):
        idx = [i for i, s in enumerate(first) if s.label == label]
        columns = [np.stack([segs[i].values for i in idx]) if idx else np.empty((0, 0)) for segs in segments_per_electrode]
        origins = [first[i].origin for i in idx]
        out += _class_objects(columns, origins, label, cfg, per_class_count, rng)
    return out


def write_objects(objects: list[AsciiObject], out_dir) -> Path:
    """One ``<label>_<id>.obj`` file per object plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for obj in objects:
        name = f"{obj.label}_{obj.id}.obj"
        (out_dir / name).write_bytes(obj.bytes)
        manifest.append(
            {"id": obj.id, "label": obj.label, "file": name, "provenance": [list(p) for p in obj.provenance]}
        )
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def read_objects(obj_dir) -> list[AsciiObject]:
    obj_dir = Path(obj_dir)
    manifest = json.loads((obj_dir / "manifest.json").read_text())
    return [
        AsciiObject(
            (obj_dir / m["file"]).read_bytes(),
            m["label"],
            m["id"],
            tuple(tuple(p) for p in m["provenance"]),
        )
        for m in manifest
    ]
