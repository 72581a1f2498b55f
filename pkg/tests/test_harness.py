import hashlib
import json

import numpy as np
import pytest

from ncd_erp import encode, harness, ingest
from ncd_erp.harness import ElectrodeScoreTable, ExperimentConfig


def _cfg(**kw):
    synth = kw.pop("synth", dict(n_characters=2, n_channels=3, rng_seed=1))
    base = dict(synth=synth, repeats=3, objects_per_run=8, fixed_m=2, fixed_c=2, master_seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_derive_seed_is_blake2b_prefix():
    digest = hashlib.blake2b(b"7|grid|3|4", digest_size=8).digest()
    assert harness.derive_seed(7, "grid", 3, 4) == int.from_bytes(digest, "little")
    seeds = {harness.derive_seed(7, "grid", m, c) for m in range(14) for c in range(14)}
    assert len(seeds) == 196
    assert harness.derive_seed(7, "grid", 1) != harness.derive_seed(8, "grid", 1)


@pytest.mark.parametrize(
    "kwargs",
    [dict(m_range=(0, 3)), dict(c_range=(2, 15)), dict(repeats=0), dict(objects_per_run=7), dict(synth=None)],
)
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        _cfg(**kwargs)


def test_worker_cap(monkeypatch):
    cfg = _cfg(workers=6)
    monkeypatch.setenv(harness.THREADS_ENV, "2")
    assert cfg.worker_count() == 2
    monkeypatch.delenv(harness.THREADS_ENV)
    assert cfg.worker_count() == 6


def test_load_config_resolves_paths(tmp_path):
    (tmp_path / "exp.toml").write_text(
        "recordings = ['a.erprec']\noutput_dir = 'out'\nrepeats = 2\nm_range = [1, 3]\n"
    )
    cfg = harness.load_config(tmp_path / "exp.toml")
    assert cfg.recordings == (str((tmp_path / "a.erprec").resolve()),)
    assert cfg.output_dir == str(tmp_path / "out")
    assert cfg.m_range == (1, 3)
    assert harness.load_config(tmp_path / "exp.toml", repeats=9).repeats == 9


def test_load_config_rejects_unknown_keys(tmp_path):
    (tmp_path / "exp.json").write_text(json.dumps({"synth": {"n_characters": 1}, "repetitions": 3}))
    with pytest.raises(ValueError, match="repetitions"):
        harness.load_config(tmp_path / "exp.json")


def _table(medians):
    names = [f"E{i}" for i in range(len(medians))]
    return ElectrodeScoreTable(tuple(names), {n: (m, m) for n, m in zip(names, medians)})


def test_rank_64_into_8_subsets():
    rng = np.random.default_rng(0)
    medians = rng.permutation(64) / 64.0
    subsets = harness.rank_and_subset(_table(medians), 8)
    assert len(subsets) == 8 and all(len(s) == 8 for s in subsets)
    order = np.argsort(-medians, kind="stable")
    assert subsets[0] == [f"E{i}" for i in order[:8]]
    assert subsets[1] == [f"E{i}" for i in order[8:16]]


def test_rank_ties_keep_index_order():
    assert harness.rank_and_subset(_table([0.3] * 5), 5) == [["E0", "E1", "E2", "E3", "E4"]]
    assert harness.rank_and_subset(_table([0.1, 0.4, 0.1, 0.4]), 2) == [["E1", "E3"], ["E0", "E2"]]


def test_rank_errors():
    with pytest.raises(ValueError):
        harness.rank_and_subset(ElectrodeScoreTable((), {}), 1)
    with pytest.raises(ValueError):
        harness.rank_and_subset(_table([0.1, 0.2]), 3)


def test_best_cell_tie_rule():
    assert harness.best_cell({(4, 2): 0.5, (2, 4): 0.5, (1, 8): 0.5, (8, 8): 0.4}) == (1, 8)
    assert harness.best_cell({(4, 2): 0.5, (2, 4): 0.5, (3, 3): 0.6}) == (3, 3)
    assert harness.best_cell({(4, 2): 0.5, (3, 3): 0.5}) == (4, 2)
    with pytest.raises(ValueError):
        harness.best_cell({})


def test_one_repeat_gives_one_value():
    table = harness.score_electrodes(_cfg(repeats=1))
    assert all(len(v) == 1 for v in table.values.values())
    assert table.electrodes == ingest.MONTAGE_ORDER[:3]


def test_scoring_is_deterministic():
    cfg = _cfg()
    a, b = harness.score_electrodes(cfg), harness.score_electrodes(cfg)
    assert a == b
    assert harness.dumps(a.to_dict()) == harness.dumps(b.to_dict())


def test_insufficient_segments_for_scoring():
    with pytest.raises(encode.InsufficientSegmentsError, match="FC5"):
        harness.score_electrodes(_cfg(fixed_m=8, fixed_c=8))


def test_ranking_follows_gain():
    synth = dict(
        n_characters=3,
        n_channels=3,
        channel_names=["Pz", "Cz", "Fz"],
        channel_gain=[0.5, 1.0, 0.1],
        snr=1.0,
        rng_seed=21,
    )
    cfg = _cfg(synth=synth, repeats=15, objects_per_run=20, fixed_m=2, fixed_c=2)
    table = harness.score_electrodes(cfg)
    assert harness.rank_and_subset(table, 1) == [["Cz"], ["Pz"], ["Fz"]]


def test_grid_marks_infeasible_cells():
    cfg = _cfg(synth=dict(n_characters=1, n_channels=1, rng_seed=2), m_range=(1, 4), c_range=(1, 4), repeats=2)
    grid = harness.grid_search(cfg, ["FC5"])
    # 30 target segments, 4 objects per class: M*C <= 7 is feasible
    for m in range(1, 5):
        for c in range(1, 5):
            assert (grid.cell(m, c) is None) == (m * c > 7)
    assert harness.GridResult.from_dict(json.loads(harness.dumps(grid.to_dict()))) == grid
    assert ",," in grid.to_csv() or grid.to_csv().rstrip().endswith(",")


def test_grid_without_feasible_cells():
    cfg = _cfg(m_range=(10, 12), c_range=(10, 12))
    with pytest.raises(ValueError, match="no feasible"):
        harness.grid_search(cfg, ["FC5"])


def test_strong_subset_beats_weak_subset_at_12_12():
    names = list(ingest.MONTAGE_ORDER[:12])
    gains = [1.0, 1.0] + [0.05] * 10
    synth = dict(n_characters=10, n_channels=12, channel_names=names, channel_gain=gains, rng_seed=3)
    cfg = _cfg(synth=synth, repeats=3, objects_per_run=8, fixed_m=4, fixed_c=4)
    segments = harness.load_segments(cfg)
    table = harness.score_electrodes(cfg, segments)
    subsets = harness.rank_and_subset(table, 2)
    assert set(subsets[0]) == {"FC5", "FC3"}
    small = _cfg(synth=synth, repeats=5, objects_per_run=4)
    best = harness.grid_search(small, subsets[0], segments, cells={(12, 12)}).cell(12, 12)
    sixth = harness.grid_search(small, subsets[5], segments, cells={(12, 12)}).cell(12, 12)
    assert best > sixth


def test_table_round_trip_and_csv():
    table = _table([0.2, 0.6])
    data = json.loads(harness.dumps(table.to_dict()))
    assert ElectrodeScoreTable.from_dict(data) == table
    assert data["electrodes"][0]["xy"] is None
    lines = table.to_csv().splitlines()
    assert lines[0] == "electrode,median,q1,q3,values"
    assert len(lines) == 3


def test_single_run_contents():
    cfg = _cfg(synth=dict(n_characters=2, n_channels=2, rng_seed=4))
    run = harness.single_run(cfg, ["FC5", "FC3"], 2, 2)
    d = run.to_dict()
    assert d["kind"] == "run" and len(d["ids"]) == 8
    assert sorted(d["labels"]).count("P300") == 4
    assert -1 <= d["dendrogram_sc"]["overall"] <= 1
    assert d["stress"] >= 0


def test_validate_two_datasets():
    a = _cfg(repeats=2, subset_size=2)
    b = _cfg(synth=dict(n_characters=2, n_channels=3, rng_seed=9), repeats=2, subset_size=2)
    report = harness.validate({"A": a, "B": b}, grid_cells={(1, 1), (2, 2)})
    assert report["kind"] == "validation"
    assert sorted(report["datasets"]) == ["A", "B"]
    for entry in report["datasets"].values():
        assert len(entry["best_subset"]) == 2
        assert entry["run"]["m"] in (1, 2)


def test_write_atomic(tmp_path):
    written = harness.write_atomic({tmp_path / "a" / "x.json": "1\n", tmp_path / "y.csv": "2\n"})
    assert [p.read_text() for p in written] == ["1\n", "2\n"]
    assert not list(tmp_path.rglob("*.tmp"))
