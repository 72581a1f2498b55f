import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncd_erp import ingest
from ncd_erp.ingest import ChannelId, Recording, RecordingFormatError, StimulusEvent, SynthesisConfig


def test_minimal_file(tmp_path):
    path = tmp_path / "min.erprec"
    data = np.array([1, 2, 3, 4], dtype="<f4").tobytes()
    path.write_bytes(b"ERPREC v1; rate=240; channels=Cz; samples=4; events=0\n---\n" + data)
    rec = ingest.read_recording(path)
    assert rec.n_samples == 4
    assert rec.events == ()
    assert rec.channels == (ChannelId("Cz", 0),)
    np.testing.assert_array_equal(rec.samples[0], [1, 2, 3, 4])


def test_round_trip_synthesized(tmp_path, small_recording):
    path = tmp_path / "r.erprec"
    ingest.write_recording(small_recording, path)
    back = ingest.read_recording(path)
    assert back == small_recording
    assert back.meta == small_recording.meta
    assert back.samples.dtype == np.float32


def test_writes_are_byte_identical(tmp_path, small_recording):
    a, b = tmp_path / "a", tmp_path / "b"
    ingest.write_recording(small_recording, a)
    ingest.write_recording(small_recording, b)
    assert a.read_bytes() == b.read_bytes()


def test_event_out_of_range_in_file(tmp_path):
    path = tmp_path / "bad.erprec"
    data = np.zeros(4, dtype="<f4").tobytes()
    path.write_bytes(b"ERPREC v1; rate=240; channels=Cz; samples=4; events=1\n9,1,1\n---\n" + data)
    with pytest.raises(RecordingFormatError, match="line 2: event out of range"):
        ingest.read_recording(path)


@pytest.mark.parametrize(
    "text, message",
    [
        (b"ERPREC v2; rate=240; channels=Cz; samples=1; events=0\n---\n", "line 1: malformed header"),
        (b"ERPREC v1; rate=240; channels=Cz; events=0\n---\n", "missing 'samples'"),
        (b"ERPREC v1; rate=240; channels=Cz; samples=1; events=1\nx,1\n---\n", "line 2: malformed event"),
    ],
)
def test_malformed_files(tmp_path, text, message):
    path = tmp_path / "bad.erprec"
    path.write_bytes(text + np.zeros(1, dtype="<f4").tobytes())
    with pytest.raises(RecordingFormatError, match=message):
        ingest.read_recording(path)


def test_inconsistent_channel_lengths(tmp_path):
    path = tmp_path / "bad.erprec"
    data = np.zeros(7, dtype="<f4").tobytes()
    path.write_bytes(b"ERPREC v1; rate=240; channels=Cz,Pz; samples=4; events=0\n---\n" + data)
    with pytest.raises(RecordingFormatError, match="inconsistent channel lengths"):
        ingest.read_recording(path)


def test_invalid_recording_rejected_before_writing(tmp_path):
    rec = Recording(240, ingest.make_channels(["Cz"]), np.zeros((1, 4), np.float32), [])
    # bypass the constructor check to emulate a corrupted object
    object.__setattr__(rec, "events", (StimulusEvent(10, 1, True),))
    path = tmp_path / "never.erprec"
    with pytest.raises(RecordingFormatError):
        ingest.write_recording(rec, path)
    assert not path.exists()


def test_constructor_invariants():
    chans = ingest.make_channels(["Cz"])
    with pytest.raises(RecordingFormatError, match="strictly increasing"):
        Recording(240, chans, np.zeros((1, 10), np.float32), [StimulusEvent(3, 1, False), StimulusEvent(3, 2, False)])
    with pytest.raises(RecordingFormatError, match="stimulus_code"):
        Recording(240, chans, np.zeros((1, 10), np.float32), [StimulusEvent(3, 13, False)])
    with pytest.raises(RecordingFormatError, match="positive"):
        Recording(0, chans, np.zeros((1, 10), np.float32), [])
    with pytest.raises(RecordingFormatError, match="unique"):
        Recording(240, (ChannelId("Cz", 0), ChannelId("Cz", 1)), np.zeros((2, 4), np.float32), [])


def test_one_character_gives_180_events():
    rec = ingest.synthesize(SynthesisConfig(n_characters=1, repeats_per_character=15))
    assert len(rec.events) == 12 * 15


def test_same_seed_same_samples():
    cfg = SynthesisConfig(n_characters=1, n_channels=2, rng_seed=99)
    np.testing.assert_array_equal(ingest.synthesize(cfg).samples, ingest.synthesize(cfg).samples)


def test_vanishing_snr_hides_the_p300():
    cfg = SynthesisConfig(n_characters=4, n_channels=1, snr=1e-9, rng_seed=3)
    rec = ingest.synthesize(cfg)
    n = round(0.6 * rec.sample_rate_hz)
    # per-segment mean amplitude in the P300 latency window, split by class
    lo, hi = round(0.2 * rec.sample_rate_hz), round(0.4 * rec.sample_rate_hz)
    tgt, non = [], []
    for ev in rec.events:
        v = rec.samples[0, ev.sample_index + lo : ev.sample_index + hi].mean()
        (tgt if ev.is_target else non).append(v)
    tgt, non = np.array(tgt), np.array(non)
    se = np.sqrt(tgt.var(ddof=1) / tgt.size + non.var(ddof=1) / non.size)
    assert abs(tgt.mean() - non.mean()) < 3 * se
    assert n == 144


def test_strong_snr_shows_the_p300():
    cfg = SynthesisConfig(n_characters=2, n_channels=1, snr=2.0, rng_seed=3)
    rec = ingest.synthesize(cfg)
    i = round(0.3 * rec.sample_rate_hz)
    tgt = [rec.samples[0, e.sample_index + i] for e in rec.events if e.is_target]
    non = [rec.samples[0, e.sample_index + i] for e in rec.events if not e.is_target]
    assert np.mean(tgt) - np.mean(non) > 1.5


def test_channel_gain_scales_deflection():
    cfg = SynthesisConfig(n_characters=3, n_channels=2, snr=3.0, channel_gain=(1.0, 0.0), rng_seed=8)
    rec = ingest.synthesize(cfg)
    i = round(0.3 * rec.sample_rate_hz)
    tgt = np.array([rec.samples[:, e.sample_index + i] for e in rec.events if e.is_target])
    assert tgt[:, 0].mean() > 2.0
    assert abs(tgt[:, 1].mean()) < 0.5


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(repeats_per_character=0),
        dict(snr=0.0),
        dict(p300_latency_ms=500.0, p300_width_ms=150.0),
        dict(n_channels=2, channel_gain=(1.0,)),
        dict(channel_gain=(1.5,)),
        dict(isi_ms=300.0),
    ],
)
def test_invalid_synthesis_config(kwargs):
    with pytest.raises(ValueError):
        SynthesisConfig(**kwargs)


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**63 - 1),
    chars=st.integers(1, 3),
    repeats=st.integers(1, 4),
    channels=st.integers(1, 3),
)
def test_trial_structure_and_round_trip(tmp_path_factory, seed, chars, repeats, channels):
    cfg = SynthesisConfig(n_characters=chars, repeats_per_character=repeats, n_channels=channels, rng_seed=seed)
    rec = ingest.synthesize(cfg)
    for trial in ingest.trials(rec):
        assert sorted(e.stimulus_code for e in trial) == list(range(1, 13))
        assert sum(e.is_target for e in trial) == 2
    path = tmp_path_factory.mktemp("rt") / "r.erprec"
    ingest.write_recording(rec, path)
    assert ingest.read_recording(path) == rec
