"""``ncd-erp`` command line."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dsp, encode, harness, ingest, mqtc, ncd, projection, quality, render

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _load_table(path) -> dict:
    path = Path(path)
    text = path.read_text()
    return json.loads(text) if path.suffix == ".json" else tomllib.loads(text)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    cfg = harness.synth_config(_load_table(args.config))
    ingest.write_recording(ingest.synthesize(cfg), args.out)


def cmd_inspect(args):
    rec = ingest.read_recording(args.file)
    targets = sum(e.is_target for e in rec.events)
    print(f"rate      {rec.sample_rate_hz} Hz")
    print(f"channels  {len(rec.channels)}: {', '.join(ch.name for ch in rec.channels)}")
    print(f"samples   {rec.n_samples} ({rec.n_samples / rec.sample_rate_hz:.1f} s)")
    print(f"events    {len(rec.events)} ({targets} targets)")
    for key, value in sorted(rec.meta.items()):
        print(f"meta      {key}={value}")


def cmd_segment(args):
    rec = ingest.read_recording(args.recording)
    spec = dsp.FilterSpec(args.low, args.high, args.order, args.mode)
    segs = dsp.extract_segments(dsp.preprocess(rec, spec), args.channel)
    dsp.write_segments(segs, args.out)
    counts = harness.class_counts(segs)
    print(f"{len(segs)} segments ({counts[dsp.P300]} P300, {counts[dsp.NON_P300]} NonP300) -> {args.out}")


def cmd_encode(args):
    segs = dsp.read_segments(args.segments)
    cfg = encode.ObjectConfig(args.M, args.C, args.levels, args.clip, args.seed)
    objs = encode.build_objects(segs, cfg, args.count)
    manifest = encode.write_objects(objs, args.out)
    print(f"{len(objs)} objects -> {manifest}")


def cmd_ncd(args):
    objs = encode.read_objects(args.objects)
    m = ncd.distance_matrix(objs, ncd.get_compressor(args.compressor), args.workers)
    side = ncd.write_matrix(m, args.out)
    print(f"{len(m)}x{len(m)} matrix -> {args.out} (labels {side})")


def cmd_tree(args):
    m = ncd.read_matrix(args.matrix)
    tree, score = mqtc.cluster_tree(m, args.budget, args.seed, args.restarts, args.max_proposals)
    Path(args.out).write_text(tree.to_newick() + "\n")
    info = {"S": score.s, "cost": score.cost, "proposals": score.proposals, "restarts": score.restarts}
    if args.score_out:
        Path(args.score_out).write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    print(f"S(T) = {score.s:.6f} after {score.proposals} proposals")


def cmd_project(args):
    m = ncd.read_matrix(args.matrix)
    p = projection.project(m, args.iters, args.seed)
    projection.write_projection(p, args.out)
    print(f"stress {projection.stress(p, m):.6f} -> {args.out}")


def cmd_score(args):
    if bool(args.tree) == bool(args.proj):
        raise SystemExit("give exactly one of --tree or --proj")
    if args.tree:
        if not args.labels:
            raise SystemExit("--tree needs --labels")
        tree = mqtc.QuartetTree.from_newick(Path(args.tree).read_text())
        report = quality.silhouette_dendrogram(tree, json.loads(Path(args.labels).read_text()))
    else:
        report = quality.silhouette_euclidean(projection.read_projection(args.proj))
    _emit(report.to_json(), args.out)


def _config(args):
    return harness.load_config(args.config, workers=getattr(args, "workers", None))


def _out_dir(cfg, args) -> Path:
    return Path(args.out_dir or cfg.output_dir)


def cmd_score_electrodes(args):
    cfg = _config(args)
    table = harness.score_electrodes(cfg)
    out = _out_dir(cfg, args)
    harness.write_atomic(
        {
            out / "electrode_scores.json": harness.dumps(table.to_dict()),
            out / "electrode_scores.csv": table.to_csv(),
        }
    )
    for rank, subset in enumerate(harness.rank_and_subset(table, min(cfg.subset_size, len(table.electrodes)))):
        print(f"subset {rank}: {' '.join(subset)}")


def cmd_grid(args):
    cfg = _config(args)
    electrodes = harness.select_electrodes(cfg, args.subset)
    grid = harness.grid_search(cfg, electrodes)
    out = _out_dir(cfg, args)
    stem = f"grid_subset{args.subset}"
    harness.write_atomic({out / f"{stem}.json": harness.dumps(grid.to_dict()), out / f"{stem}.csv": grid.to_csv()})
    m, c = grid.best
    print(f"best cell M={m} C={c}: median SC {grid.cell(m, c):.4f}")


def cmd_run(args):
    cfg = _config(args)
    electrodes = harness.select_electrodes(cfg, args.subset)
    m = args.m or cfg.fixed_m
    c = args.c or cfg.fixed_c
    run = harness.single_run(cfg, electrodes, m, c)
    out = _out_dir(cfg, args)
    harness.write_atomic({out / f"run_M{m}_C{c}.json": harness.dumps(run.to_dict())})
    print(f"dendrogram SC {run.dendrogram_sc.overall:.4f}, projection SC {run.projection_sc.overall:.4f}")


def cmd_validate(args):
    names = args.name or [Path(p).stem for p in args.config]
    if len(names) != len(args.config):
        raise SystemExit("--name must be given once per --config")
    datasets = {n: harness.load_config(p, workers=args.workers) for n, p in zip(names, args.config)}
    report = harness.validate(datasets, args.m, args.c)
    out = Path(args.out_dir or next(iter(datasets.values())).output_dir)
    harness.write_atomic({out / "validation.json": harness.dumps(report)})
    for name, entry in sorted(report["datasets"].items()):
        run = entry["run"]
        print(
            f"{name}: best subset {' '.join(entry['best_subset'])}; M={run['m']} C={run['c']}; "
            f"dendrogram SC {run['dendrogram_sc']['overall']:.4f}, projection SC {run['projection_sc']['overall']:.4f}"
        )


def cmd_render(args):
    path = Path(args.result)
    data = json.loads(path.read_text())
    written = render.render(data, args.out_dir or path.parent, path.stem)
    for p in written:
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncd-erp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a P300 speller recording")
    s.add_argument("--config", required=True, help="TOML/JSON with SynthesisConfig fields")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inspect", help="summarize a recording file")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("segment", help="filter, standardize and cut labeled segments")
    s.add_argument("recording")
    s.add_argument("--channel", default="Cz")
    s.add_argument("--low", type=float, default=0.5)
    s.add_argument("--high", type=float, default=10.0)
    s.add_argument("--order", type=int, default=4)
    s.add_argument("--mode", default="forward-backward", choices=["forward", "forward-backward"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("encode", help="build ASCII objects from a segments file")
    s.add_argument("segments")
    s.add_argument("-M", type=int, default=8)
    s.add_argument("-C", type=int, default=8)
    s.add_argument("--count", type=int, default=10, help="objects per class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--levels", type=int, default=64)
    s.add_argument("--clip", type=float, default=3.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("ncd", help="NCD matrix of an objects directory")
    s.add_argument("objects")
    s.add_argument("--compressor", default=ncd.DEFAULT_COMPRESSOR, choices=sorted(ncd.COMPRESSORS))
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ncd)

    s = sub.add_parser("tree", help="minimum quartet tree of a matrix")
    s.add_argument("matrix")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=4)
    s.add_argument("--budget", type=int, default=mqtc.DEFAULT_BUDGET, help="consecutive rejections before stopping")
    s.add_argument("--max-proposals", type=int, default=mqtc.DEFAULT_MAX_PROPOSALS)
    s.add_argument("--out", required=True)
    s.add_argument("--score-out")
    s.set_defaults(func=cmd_tree)

    s = sub.add_parser("project", help="nearest-neighbour 2-D projection of a matrix")
    s.add_argument("matrix")
    s.add_argument("--iters", type=int, default=projection.DEFAULT_SWEEPS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("score", help="Silhouette Coefficient of a tree or projection")
    s.add_argument("--tree")
    s.add_argument("--labels", help="JSON mapping id -> label (the matrix sidecar)")
    s.add_argument("--proj")
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    for name, func, help_text in (
        ("score-electrodes", cmd_score_electrodes, "SC distribution per electrode"),
        ("grid", cmd_grid, "M x C grid search over an electrode subset"),
        ("run", cmd_run, "one dendrogram + projection at a fixed (M, C)"),
    ):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True)
        s.add_argument("--out-dir")
        s.add_argument("--workers", type=int)
        if name != "score-electrodes":
            s.add_argument("--subset", type=int, default=0)
        if name == "run":
            s.add_argument("--m", type=int)
            s.add_argument("--c", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("validate", help="repeat electrode scoring and configuration per dataset")
    s.add_argument("--config", action="append", required=True)
    s.add_argument("--name", action="append")
    s.add_argument("--m", type=int)
    s.add_argument("--c", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("render", help="SVG + CSV artifacts for a result JSON")
    s.add_argument("result")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"ncd-erp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
