"""Band-pass filtering, standardization and 600 ms segment extraction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .ingest import ChannelId, Recording

P300 = "P300"
NON_P300 = "NonP300"
SEGMENT_SECONDS = 0.6

SEG_MAGIC = "ERPSEG v1"


@dataclass(frozen=True)
class FilterSpec:
    low_cut_hz: float = 0.5
    high_cut_hz: float = 10.0
    order: int = 4
    mode: str = "forward-backward"

    def __post_init__(self):
        if self.order < 2 or self.order % 2:
            raise ValueError(f"order must be an even positive integer, got {self.order}")
        if self.mode not in ("forward", "forward-backward"):
            raise ValueError(f"unknown filter mode {self.mode!r}")

    def check(self, sample_rate_hz: float) -> None:
        nyq = sample_rate_hz / 2.0
        if not 0 < self.low_cut_hz < self.high_cut_hz < nyq:
            raise ValueError(
                f"cutoffs must satisfy 0 < {self.low_cut_hz} < {self.high_cut_hz} < Nyquist ({nyq} Hz)"
            )


@dataclass(frozen=True)
class Segment:
    channel: ChannelId
    values: np.ndarray
    label: str
    origin: tuple[int, str]


def window_length(sample_rate_hz: int) -> int:
    return round(SEGMENT_SECONDS * sample_rate_hz)


def butter_sos(spec: FilterSpec, sample_rate_hz: float) -> np.ndarray:
    spec.check(sample_rate_hz)
    # a band-pass design doubles the prototype order, so halve it to get `order` poles total
    return signal.butter(
        spec.order // 2,
        [spec.low_cut_hz, spec.high_cut_hz],
        btype="bandpass",
        fs=sample_rate_hz,
        output="sos",
    )


def filter_array(x: np.ndarray, spec: FilterSpec, sample_rate_hz: float) -> np.ndarray:
    """Filter along the last axis with zero initial state."""
    sos = butter_sos(spec, sample_rate_hz)
    x = np.asarray(x, dtype=np.float64)
    y = signal.sosfilt(sos, x, axis=-1)
    if spec.mode == "forward-backward":
        y = signal.sosfilt(sos, y[..., ::-1], axis=-1)[..., ::-1]
    return np.ascontiguousarray(y)


def bandpass(rec: Recording, spec: FilterSpec = FilterSpec()) -> Recording:
    return rec.replace_samples(filter_array(rec.samples, spec, rec.sample_rate_hz))


def standardize(rec: Recording) -> Recording:
    """Per-channel z-score over the whole session (sample standard deviation)."""
    x = np.asarray(rec.samples, dtype=np.float64)
    if x.shape[1] < 2:
        raise ValueError("standardize needs more than one sample per channel")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    sd = centered.std(axis=1, ddof=1, keepdims=True)
    for ch, s in zip(rec.channels, sd[:, 0]):
        if not s > 0:
            raise ValueError(f"channel {ch.name!r} has zero variance")
    z = centered / sd
    # second centering pass removes rounding residue from the first
    z -= z.mean(axis=1, keepdims=True)
    return rec.replace_samples(z)


def extract_segments(rec: Recording, channel: ChannelId | str) -> list[Segment]:
    ch = rec.channel(channel) if isinstance(channel, str) else channel
    if rec.channels[ch.index] != ch:
        raise KeyError(f"channel {ch} not in recording")
    n = window_length(rec.sample_rate_hz)
    row = rec.samples[ch.index]
    rid = rec.recording_id
    out = []
    for k, ev in enumerate(rec.events):
        stop = ev.sample_index + n
        if stop > rec.n_samples:
            raise ValueError(
                f"event {k} at sample {ev.sample_index}: window of {n} overruns recording end ({rec.n_samples})"
            )
        values = np.array(row[ev.sample_index : stop], dtype=np.float64)
        out.append(Segment(ch, values, P300 if ev.is_target else NON_P300, (k, rid)))
    return out


def preprocess(rec: Recording, spec: FilterSpec = FilterSpec()) -> Recording:
    return standardize(bandpass(rec, spec))


def split_by_label(segments: list[Segment]) -> dict[str, list[Segment]]:
    out: dict[str, list[Segment]] = {P300: [], NON_P300: []}
    for s in segments:
        out[s.label].append(s)
    return out


# -- segments file -------------------------------------------------------------

def write_segments(segments: list[Segment], path) -> None:
    """Header line, one ``channel,label,event,recording`` line per segment, ``---``, float32 block."""
    if not segments:
        raise ValueError("no segments to write")
    n = segments[0].values.size
    if any(s.values.size != n for s in segments):
        raise ValueError("segments differ in length")
    head = f"{SEG_MAGIC}; length={n}; count={len(segments)}"
    lines = [head]
    for s in segments:
        lines.append(f"{s.channel.name},{s.channel.index},{s.label},{s.origin[0]},{s.origin[1]}")
    lines.append("---")
    data = np.stack([s.values for s in segments]).astype("<f4").tobytes()
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8") + data)


def read_segments(path) -> list[Segment]:
    raw = Path(path).read_bytes()
    marker = b"\n---\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: missing '---' separator")
    lines = raw[:cut].decode("utf-8").split("\n")
    fields = dict(p.strip().partition("=")[::2] for p in lines[0].split(";")[1:])
    if not lines[0].startswith(SEG_MAGIC):
        raise ValueError(f"{path}: line 1: not a segments file")
    n, count = int(fields["length"]), int(fields["count"])
    records = lines[1:]
    if len(records) != count:
        raise ValueError(f"{path}: header declares {count} segments, found {len(records)}")
    data = np.frombuffer(raw, dtype="<f4", offset=cut + len(marker))
    if data.size != n * count:
        raise ValueError(f"{path}: sample block size mismatch")
    data = data.reshape(count, n).astype(np.float64)
    out = []
    for k, line in enumerate(records):
        name, index, label, event, rid = line.split(",", 4)
        if label not in (P300, NON_P300):
            raise ValueError(f"{path}: line {k + 2}: unknown label {label!r}")
        out.append(Segment(ChannelId(name, int(index)), data[k], label, (int(event), rid)))
    return out
