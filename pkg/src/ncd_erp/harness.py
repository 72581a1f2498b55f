"""Experiment orchestration: electrode scoring, M x C grid search, single runs
and the cross-dataset validation protocol.

Every job (one dendrogram for one electrode set, one (M, C) cell and one
repeat) is a pure function of its inputs and a seed derived from the master
seed, so results do not depend on how jobs are scheduled across workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp, encode, ingest, mqtc, ncd, projection, quality

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

THREADS_ENV = "NCD_ERP_THREADS"
GRID_BOUNDS = (1, 14)


def derive_seed(master_seed: int, tag: str, *indices: int) -> int:
    """64-bit seed from the first 8 bytes (little endian) of
    BLAKE2b(``"<master>|<tag>|<i0>|<i1>..."``)."""
    key = "|".join([str(int(master_seed)), tag, *(str(int(i)) for i in indices)])
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ExperimentConfig:
    recordings: tuple[str, ...] = ()
    synth: dict | None = None
    electrodes: tuple[str, ...] = ()
    top_k: int = 0
    prior_scores: str = ""
    m_range: tuple[int, int] = GRID_BOUNDS
    c_range: tuple[int, int] = GRID_BOUNDS
    fixed_m: int = 8
    fixed_c: int = 8
    objects_per_run: int = 20
    repeats: int = 100
    compressor: str = ncd.DEFAULT_COMPRESSOR
    master_seed: int = 0
    output_dir: str = "results"
    subset_size: int = 8
    budget: int = mqtc.DEFAULT_BUDGET
    max_proposals: int = mqtc.DEFAULT_MAX_PROPOSALS
    restarts: int = 1
    workers: int = 1
    quant_levels: int = 64
    clip_sigma: float = 3.0
    filter: dict = field(default_factory=dict)
    projection_sweeps: int = projection.DEFAULT_SWEEPS

    def __post_init__(self):
        for name in ("m_range", "c_range"):
            lo, hi = getattr(self, name)
            if not GRID_BOUNDS[0] <= lo <= hi <= GRID_BOUNDS[1]:
                raise ValueError(f"{name} {lo}..{hi} outside {GRID_BOUNDS[0]}..{GRID_BOUNDS[1]}")
            object.__setattr__(self, name, (int(lo), int(hi)))
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.objects_per_run < 2 or self.objects_per_run % 2:
            raise ValueError("objects_per_run must be an even number >= 2 (half per class)")
        if not self.recordings and not self.synth:
            raise ValueError("configure either recordings or a [synth] table")
        ncd.get_compressor(self.compressor)
        object.__setattr__(self, "recordings", tuple(self.recordings))
        object.__setattr__(self, "electrodes", tuple(self.electrodes))

    @property
    def per_class(self) -> int:
        return self.objects_per_run // 2

    @property
    def filter_spec(self) -> dsp.FilterSpec:
        return dsp.FilterSpec(**self.filter)

    def object_config(self, m: int, c: int, seed: int) -> encode.ObjectConfig:
        return encode.ObjectConfig(m, c, self.quant_levels, self.clip_sigma, seed)

    def worker_count(self) -> int:
        cap = os.environ.get(THREADS_ENV)
        n = self.workers
        if cap:
            n = min(n, max(1, int(cap)))
        return max(1, n)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an experiment config from TOML (or JSON, by suffix)."""
    path = Path(path)
    text = path.read_text()
    raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    base = path.parent
    raw["recordings"] = tuple(str((base / p).resolve()) if not Path(p).is_absolute() else p for p in raw.get("recordings", ()))
    for key in ("electrodes", "m_range", "c_range"):
        if key in raw:
            raw[key] = tuple(raw[key])
    out_dir = Path(raw.get("output_dir", "results"))
    raw["output_dir"] = str(out_dir if out_dir.is_absolute() else base / out_dir)
    if raw.get("prior_scores") and not Path(raw["prior_scores"]).is_absolute():
        raw["prior_scores"] = str(base / raw["prior_scores"])
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(raw) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return ExperimentConfig(**raw)


# -- segment supply ----------------------------------------------------------------

def synth_config(table: dict) -> ingest.SynthesisConfig:
    table = dict(table)
    for key in ("channel_gain", "channel_names"):
        if key in table:
            table[key] = tuple(table[key])
    return ingest.SynthesisConfig(**table)


def load_recordings(cfg: ExperimentConfig) -> list[ingest.Recording]:
    if cfg.recordings:
        return [ingest.read_recording(p) for p in cfg.recordings]
    return [ingest.synthesize(synth_config(cfg.synth))]


def load_segments(cfg: ExperimentConfig, recordings=None) -> dict[str, list[dsp.Segment]]:
    """Event-aligned segments per electrode, pooled over all recordings.

    Each recording is filtered and standardized on its own before pooling.
    """
    recs = load_recordings(cfg) if recordings is None else recordings
    names = list(cfg.electrodes) or [ch.name for ch in recs[0].channels]
    out: dict[str, list[dsp.Segment]] = {name: [] for name in names}
    for k, rec in enumerate(recs):
        if not rec.recording_id:
            rec = _with_id(rec, f"rec{k}")
        missing = [n for n in names if n not in {ch.name for ch in rec.channels}]
        if missing:
            raise ValueError(f"recording {rec.recording_id!r} lacks electrodes {missing}")
        clean = dsp.preprocess(rec, cfg.filter_spec)
        for name in names:
            out[name] += dsp.extract_segments(clean, name)
    return out


def _with_id(rec, rid):
    return ingest.Recording(rec.sample_rate_hz, rec.channels, rec.samples, rec.events, {**rec.meta, "id": rid})


def class_counts(segments: list[dsp.Segment]) -> dict[str, int]:
    groups = dsp.split_by_label(segments)
    return {label: len(v) for label, v in groups.items()}


def feasible(segments: list[dsp.Segment], m: int, c: int, per_class: int) -> bool:
    return min(class_counts(segments).values()) >= per_class * m * c


# -- jobs ----------------------------------------------------------------------

_SEGMENTS: dict[str, list[dsp.Segment]] = {}


def _init_worker(segments):
    global _SEGMENTS
    _SEGMENTS = segments


@dataclass(frozen=True)
class Job:
    key: tuple
    electrodes: tuple[str, ...]
    m: int
    c: int
    seed: int


def _build_run(job: Job, cfg: ExperimentConfig, segments):
    per_electrode = [segments[e] for e in job.electrodes]
    objs = encode.build_multi_objects(
        per_electrode, cfg.object_config(job.m, job.c, derive_seed(job.seed, "objects")), cfg.per_class
    )
    # randomize matrix order so projection placement order carries no class information
    order = np.random.default_rng(derive_seed(job.seed, "order")).permutation(len(objs))
    objs = [objs[i] for i in order]
    matrix = ncd.distance_matrix(objs, ncd.get_compressor(cfg.compressor))
    tree, score = mqtc.cluster_tree(
        matrix, cfg.budget, derive_seed(job.seed, "tree"), cfg.restarts, cfg.max_proposals
    )
    sil = quality.silhouette_dendrogram(tree, dict(zip(matrix.ids, matrix.labels)))
    return objs, matrix, tree, score, sil


def run_job(job: Job, cfg: ExperimentConfig, segments=None) -> dict:
    """One dendrogram: build objects, NCD matrix, MQTC, dendrogram SC."""
    segments = _SEGMENTS if segments is None else segments
    _, matrix, _, score, sil = _build_run(job, cfg, segments)
    return {
        "sc": sil.overall,
        "tree_score": score.s,
        "ncd_diff": ncd.group_distance_summary(matrix)["diff"],
    }


def _run_job_star(args):
    return args[0].key, run_job(args[0], args[1])


def execute(jobs: list[Job], cfg: ExperimentConfig, segments) -> dict[tuple, dict]:
    workers = cfg.worker_count()
    if workers == 1 or len(jobs) < 2:
        return {job.key: run_job(job, cfg, segments) for job in jobs}
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(segments,)) as pool:
        return dict(pool.map(_run_job_star, [(job, cfg) for job in jobs], chunksize=4))


# -- electrode scoring ------------------------------------------------------------

@dataclass(frozen=True)
class ElectrodeScoreTable:
    electrodes: tuple[str, ...]
    values: dict[str, tuple[float, ...]]
    m: int = 8
    c: int = 8

    def median(self, name: str) -> float:
        return float(np.median(self.values[name]))

    def quartiles(self, name: str) -> tuple[float, float]:
        q1, q3 = np.percentile(self.values[name], [25, 75])
        return float(q1), float(q3)

    def to_dict(self) -> dict:
        montage = ingest.load_montage()
        rows = []
        for name in self.electrodes:
            q1, q3 = self.quartiles(name)
            rows.append(
                {
                    "electrode": name,
                    "values": list(self.values[name]),
                    "median": self.median(name),
                    "q1": q1,
                    "q3": q3,
                    "xy": list(montage[name]) if name in montage else None,
                }
            )
        return {"kind": "electrode_scores", "m": self.m, "c": self.c, "electrodes": rows}

    @classmethod
    def from_dict(cls, data: dict) -> ElectrodeScoreTable:
        rows = data["electrodes"]
        return cls(
            tuple(r["electrode"] for r in rows),
            {r["electrode"]: tuple(r["values"]) for r in rows},
            data.get("m", 8),
            data.get("c", 8),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["electrode", "median", "q1", "q3", "values"])
        for name in self.electrodes:
            q1, q3 = self.quartiles(name)
            vals = " ".join(repr(v) for v in self.values[name])
            w.writerow([name, repr(self.median(name)), repr(q1), repr(q3), vals])
        return buf.getvalue()


def score_electrodes(cfg: ExperimentConfig, segments=None) -> ElectrodeScoreTable:
    """SC distribution per electrode over ``repeats`` dendrograms at (fixed_m, fixed_c)."""
    segments = load_segments(cfg) if segments is None else segments
    names = list(segments)
    for name in names:
        if not feasible(segments[name], cfg.fixed_m, cfg.fixed_c, cfg.per_class):
            counts = class_counts(segments[name])
            need = cfg.per_class * cfg.fixed_m * cfg.fixed_c
            raise encode.InsufficientSegmentsError(
                f"electrode {name}: need {need} segments per class, have {counts}"
            )
    jobs = [
        Job((e, r), (name,), cfg.fixed_m, cfg.fixed_c, derive_seed(cfg.master_seed, "electrode", e, r))
        for e, name in enumerate(names)
        for r in range(cfg.repeats)
    ]
    results = execute(jobs, cfg, segments)
    values = {name: tuple(results[(e, r)]["sc"] for r in range(cfg.repeats)) for e, name in enumerate(names)}
    return ElectrodeScoreTable(tuple(names), values, cfg.fixed_m, cfg.fixed_c)


def rank_and_subset(table: ElectrodeScoreTable, k: int) -> list[list[str]]:
    """Electrodes by median SC, best first (ties keep table order), cut into runs of ``k``."""
    if not table.electrodes:
        raise ValueError("empty electrode table")
    if not 1 <= k <= len(table.electrodes):
        raise ValueError(f"subset size {k} must lie in 1..{len(table.electrodes)}")
    order = sorted(range(len(table.electrodes)), key=lambda i: (-table.median(table.electrodes[i]), i))
    ranked = [table.electrodes[i] for i in order]
    return [ranked[i : i + k] for i in range(0, len(ranked), k)]


def select_electrodes(cfg: ExperimentConfig, subset: int = 0) -> list[str]:
    """Explicit electrode list, or subset ``subset`` of the ranking in ``prior_scores``."""
    if cfg.top_k and cfg.prior_scores:
        table = ElectrodeScoreTable.from_dict(json.loads(Path(cfg.prior_scores).read_text()))
        subsets = rank_and_subset(table, cfg.top_k)
        if not 0 <= subset < len(subsets):
            raise ValueError(f"subset {subset} out of range (0..{len(subsets) - 1})")
        return subsets[subset]
    if cfg.electrodes:
        return list(cfg.electrodes)
    raise ValueError("config selects no electrodes: give `electrodes` or `top_k` with `prior_scores`")


# -- grid search ---------------------------------------------------------------

@dataclass(frozen=True)
class GridResult:
    m_values: tuple[int, ...]
    c_values: tuple[int, ...]
    median: tuple[tuple[float | None, ...], ...]  # [m][c], None when infeasible
    electrodes: tuple[str, ...]
    best: tuple[int, int]
    values: dict = field(default_factory=dict, compare=False)

    def cell(self, m: int, c: int) -> float | None:
        return self.median[self.m_values.index(m)][self.c_values.index(c)]

    def to_dict(self) -> dict:
        return {
            "kind": "grid",
            "electrodes": list(self.electrodes),
            "m_values": list(self.m_values),
            "c_values": list(self.c_values),
            "median": [list(row) for row in self.median],
            "best": {"m": self.best[0], "c": self.best[1]},
            "values": {f"{m},{c}": list(v) for (m, c), v in sorted(self.values.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> GridResult:
        values = {tuple(int(x) for x in k.split(",")): tuple(v) for k, v in data.get("values", {}).items()}
        return cls(
            tuple(data["m_values"]),
            tuple(data["c_values"]),
            tuple(tuple(row) for row in data["median"]),
            tuple(data["electrodes"]),
            (data["best"]["m"], data["best"]["c"]),
            values,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["M\\C"] + list(self.c_values))
        for m, row in zip(self.m_values, self.median):
            w.writerow([m] + ["" if v is None else repr(v) for v in row])
        return buf.getvalue()


def best_cell(cells: dict[tuple[int, int], float]) -> tuple[int, int]:
    """Highest median; ties go to the smaller M*C, then the smaller M."""
    if not cells:
        raise ValueError("no feasible grid cells")
    return min(cells, key=lambda mc: (-cells[mc], mc[0] * mc[1], mc[0]))


def grid_search(cfg: ExperimentConfig, electrodes, segments=None, cells=None) -> GridResult:
    """Median dendrogram SC for every (M, C) in the configured ranges.

    ``cells`` restricts the evaluated pairs; cells lacking segment supply are
    reported as ``None``.
    """
    electrodes = tuple(electrodes)
    if segments is None:
        segments = load_segments(replace(cfg, electrodes=electrodes))
    m_values = tuple(range(cfg.m_range[0], cfg.m_range[1] + 1))
    c_values = tuple(range(cfg.c_range[0], cfg.c_range[1] + 1))
    wanted = [(m, c) for m in m_values for c in c_values if cells is None or (m, c) in cells]
    supply = segments[electrodes[0]]
    ok = [(m, c) for m, c in wanted if feasible(supply, m, c, cfg.per_class)]
    if not ok:
        raise ValueError("no feasible (M, C) cells for the available segments")
    jobs = [
        Job((m, c, r), electrodes, m, c, derive_seed(cfg.master_seed, "grid", m, c, r))
        for m, c in ok
        for r in range(cfg.repeats)
    ]
    results = execute(jobs, cfg, segments)
    values = {(m, c): tuple(results[(m, c, r)]["sc"] for r in range(cfg.repeats)) for m, c in ok}
    medians = {mc: float(np.median(v)) for mc, v in values.items()}
    table = tuple(tuple(medians.get((m, c)) for c in c_values) for m in m_values)
    return GridResult(m_values, c_values, table, electrodes, best_cell(medians), values)


# -- single run and validation ---------------------------------------------------------

@dataclass(frozen=True)
class RunResult:
    electrodes: tuple[str, ...]
    m: int
    c: int
    matrix: ncd.DistanceMatrix
    tree: mqtc.QuartetTree
    tree_score: mqtc.TreeScore
    projection: projection.Projection2D
    dendrogram_sc: quality.SilhouetteReport
    projection_sc: quality.SilhouetteReport

    def to_dict(self) -> dict:
        return {
            "kind": "run",
            "electrodes": list(self.electrodes),
            "m": self.m,
            "c": self.c,
            "ids": list(self.matrix.ids),
            "labels": list(self.matrix.labels),
            "matrix": self.matrix.values.tolist(),
            "newick": self.tree.to_newick(),
            "tree_score": asdict(self.tree_score),
            "points": self.projection.points.tolist(),
            "stress": projection.stress(self.projection, self.matrix),
            "dendrogram_sc": self.dendrogram_sc.to_dict(),
            "projection_sc": self.projection_sc.to_dict(),
            "ncd_summary": ncd.group_distance_summary(self.matrix),
        }


def single_run(cfg: ExperimentConfig, electrodes, m: int, c: int, segments=None, tag: str = "run") -> RunResult:
    """One object set at (m, c): dendrogram and projection with both SC variants."""
    electrodes = tuple(electrodes)
    if segments is None:
        segments = load_segments(replace(cfg, electrodes=electrodes))
    job = Job((tag,), electrodes, m, c, derive_seed(cfg.master_seed, tag, m, c))
    _, matrix, tree, score, dend_sc = _build_run(job, cfg, segments)
    proj = projection.project(matrix, cfg.projection_sweeps, derive_seed(job.seed, "projection"))
    return RunResult(electrodes, m, c, matrix, tree, score, proj, dend_sc, quality.silhouette_euclidean(proj))


def validate(datasets: dict[str, ExperimentConfig], m: int | None = None, c: int | None = None, grid_cells=None) -> dict:
    """Repeat the electrode-scoring and object-configuration study on each dataset.

    Per dataset: score every electrode at (fixed_m, fixed_c), keep the best
    ``subset_size`` electrodes, pick (M, C) by grid search unless given, and
    report a dendrogram and a projection with their SCs.
    """
    report = {"kind": "validation", "datasets": {}}
    for name in sorted(datasets):
        cfg = datasets[name]
        segments = load_segments(cfg)
        table = score_electrodes(cfg, segments)
        best = rank_and_subset(table, min(cfg.subset_size, len(table.electrodes)))[0]
        entry = {"electrode_scores": table.to_dict(), "best_subset": best}
        if m is None or c is None:
            grid = grid_search(cfg, best, segments, grid_cells)
            entry["grid"] = grid.to_dict()
            mm, cc = grid.best
        else:
            mm, cc = m, c
        run = single_run(cfg, best, mm, cc, segments, tag=f"validate-{name}")
        entry["run"] = run.to_dict()
        report["datasets"][name] = entry
    return report


# -- persistence --------------------------------------------------------------

def dumps(data: dict) -> str:
    return json.dumps(data, indent=1, sort_keys=True) + "\n"


def write_atomic(files: dict[Path, str]) -> list[Path]:
    """Write all files or none: contents are staged first, then renamed into place."""
    staged = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, path in staged:
        tmp.replace(path)
    return [p for _, p in staged]
