"""Recording data model, canonical file format and synthetic speller sessions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from urllib.parse import parse_qsl, urlencode

import numpy as np

MAGIC = "ERPREC v1"
SEPARATOR = "---"
CODES_PER_TRIAL = 12
TARGETS_PER_TRIAL = 2


class RecordingFormatError(ValueError):
    """Raised when a recording file or object violates the canonical format."""


@dataclass(frozen=True)
class ChannelId:
    name: str
    index: int


@dataclass(frozen=True)
class StimulusEvent:
    sample_index: int
    stimulus_code: int
    is_target: bool


@dataclass(frozen=True, eq=False)
class Recording:
    """Multichannel signal with stimulus markers.

    ``samples`` is channel-major, shape ``(n_channels, n_samples)``. Files
    store float32, so only float32 recordings round-trip bit-exactly.
    """

    sample_rate_hz: int
    channels: tuple[ChannelId, ...]
    samples: np.ndarray
    events: tuple[StimulusEvent, ...]
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "meta", dict(self.meta))
        validate(self)

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def recording_id(self) -> str:
        return self.meta.get("session", self.meta.get("id", ""))

    def channel(self, name: str) -> ChannelId:
        for ch in self.channels:
            if ch.name == name:
                return ch
        raise KeyError(f"no channel named {name!r}")

    def replace_samples(self, samples: np.ndarray) -> Recording:
        return Recording(self.sample_rate_hz, self.channels, samples, self.events, self.meta)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.channels == other.channels
            and self.events == other.events
            and self.meta == other.meta
            and self.samples.dtype == other.samples.dtype
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


def validate(rec: Recording) -> None:
    if not isinstance(rec.sample_rate_hz, (int, np.integer)) or rec.sample_rate_hz <= 0:
        raise RecordingFormatError(f"sample_rate_hz must be a positive integer, got {rec.sample_rate_hz!r}")
    samples = rec.samples
    if not isinstance(samples, np.ndarray) or samples.ndim != 2:
        raise RecordingFormatError("samples must be a 2-D channel-major array")
    if samples.shape[0] != len(rec.channels):
        raise RecordingFormatError(
            f"{samples.shape[0]} sample rows for {len(rec.channels)} channels"
        )
    names = [ch.name for ch in rec.channels]
    if len(set(names)) != len(names):
        raise RecordingFormatError("channel names must be unique")
    for pos, ch in enumerate(rec.channels):
        if ch.index != pos:
            raise RecordingFormatError(f"channel {ch.name!r} has index {ch.index}, expected {pos}")
        if not ch.name or any(c in ch.name for c in ",;\n"):
            raise RecordingFormatError(f"invalid channel name {ch.name!r}")
    n = samples.shape[1]
    prev = -1
    for k, ev in enumerate(rec.events):
        if not 0 <= ev.sample_index < n:
            raise RecordingFormatError(f"event {k}: event out of range (sample {ev.sample_index}, {n} samples)")
        if ev.sample_index <= prev:
            raise RecordingFormatError(f"event {k}: sample indices must be strictly increasing")
        if not 1 <= ev.stimulus_code <= CODES_PER_TRIAL:
            raise RecordingFormatError(f"event {k}: stimulus_code {ev.stimulus_code} outside 1..12")
        prev = ev.sample_index


def make_channels(names) -> tuple[ChannelId, ...]:
    return tuple(ChannelId(name, i) for i, name in enumerate(names))


# -- canonical file format ---------------------------------------------------

def _header(rec: Recording) -> str:
    parts = [
        MAGIC,
        f"rate={rec.sample_rate_hz}",
        "channels=" + ",".join(ch.name for ch in rec.channels),
        f"samples={rec.n_samples}",
        f"events={len(rec.events)}",
    ]
    if rec.meta:
        parts.append("meta=" + urlencode(sorted(rec.meta.items())))
    return "; ".join(parts)


def write_recording(rec: Recording, path) -> None:
    """Write ``rec`` in the canonical container; output bytes depend only on ``rec``."""
    validate(rec)
    lines = [_header(rec)]
    lines += [f"{e.sample_index},{e.stimulus_code},{int(e.is_target)}" for e in rec.events]
    lines.append(SEPARATOR)
    text = "\n".join(lines) + "\n"
    data = np.ascontiguousarray(rec.samples, dtype="<f4").tobytes()
    Path(path).write_bytes(text.encode("utf-8") + data)


def _parse_header(line: str) -> dict[str, str]:
    parts = [p.strip() for p in line.split(";")]
    if parts[0] != MAGIC:
        raise RecordingFormatError(f"line 1: malformed header, expected {MAGIC!r}")
    fields = {}
    for p in parts[1:]:
        key, sep, value = p.partition("=")
        if not sep:
            raise RecordingFormatError(f"line 1: malformed header field {p!r}")
        fields[key] = value
    for key in ("rate", "channels", "samples", "events"):
        if key not in fields:
            raise RecordingFormatError(f"line 1: malformed header, missing {key!r}")
    return fields


def read_recording(path) -> Recording:
    raw = Path(path).read_bytes()
    pos = 0
    lines = []
    # text section ends at the separator line; binary data follows
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise RecordingFormatError(f"line {len(lines) + 1}: missing '---' separator")
        line = raw[pos:end].decode("utf-8")
        pos = end + 1
        if line == SEPARATOR and lines:
            break
        lines.append(line)
    fields = _parse_header(lines[0])
    try:
        rate = int(fields["rate"])
        n_samples = int(fields["samples"])
        n_events = int(fields["events"])
    except ValueError as exc:
        raise RecordingFormatError(f"line 1: malformed header ({exc})") from None
    names = fields["channels"].split(",") if fields["channels"] else []
    meta = dict(parse_qsl(fields.get("meta", ""), keep_blank_values=True))

    event_lines = lines[1:]
    if len(event_lines) != n_events:
        raise RecordingFormatError(f"header declares {n_events} events, found {len(event_lines)}")
    events = []
    for k, line in enumerate(event_lines):
        lineno = k + 2
        try:
            idx, code, target = (int(v) for v in line.split(","))
        except ValueError:
            raise RecordingFormatError(f"line {lineno}: malformed event record {line!r}") from None
        if target not in (0, 1):
            raise RecordingFormatError(f"line {lineno}: is_target must be 0 or 1")
        if not 0 <= idx < n_samples:
            raise RecordingFormatError(f"line {lineno}: event out of range (sample {idx}, {n_samples} samples)")
        events.append(StimulusEvent(idx, code, bool(target)))

    expected = 4 * len(names) * n_samples
    if len(raw) - pos != expected:
        raise RecordingFormatError(
            f"sample block holds {len(raw) - pos} bytes, expected {expected} "
            f"({len(names)} channels x {n_samples} samples): inconsistent channel lengths"
        )
    samples = np.frombuffer(raw, dtype="<f4", offset=pos).reshape(len(names), n_samples)
    samples = samples.astype(np.float32)
    return Recording(rate, make_channels(names), samples, events, meta)


# -- montage -------------------------------------------------------------------

def load_montage() -> dict[str, tuple[float, float]]:
    """Bundled 64-channel 10-10 head coordinates, unit circle through Fpz/T7/Oz/T8."""
    text = resources.files("ncd_erp").joinpath("data/montage_64.csv").read_text()
    rows = csv.DictReader(text.splitlines())
    return {r["name"]: (float(r["x"]), float(r["y"])) for r in rows}


MONTAGE_ORDER = tuple(load_montage())


# -- synthesis -----------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisConfig:
    n_characters: int = 1
    repeats_per_character: int = 15
    n_channels: int = 1
    snr: float = 1.0
    p300_latency_ms: float = 300.0
    p300_width_ms: float = 150.0
    channel_gain: tuple[float, ...] = ()
    rng_seed: int = 0
    sample_rate_hz: int = 240
    noise_sd: float = 1.0
    isi_ms: float = 750.0
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channel_gain", tuple(float(g) for g in self.channel_gain))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if self.n_characters < 1:
            raise ValueError("n_characters must be >= 1")
        if self.repeats_per_character < 1:
            raise ValueError("repeats_per_character must be >= 1")
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.p300_width_ms <= 0 or self.p300_latency_ms < 0:
            raise ValueError("p300 latency must be >= 0 and width > 0")
        if self.p300_latency_ms + self.p300_width_ms > 600.0:
            raise ValueError("p300 latency + width must fit inside the 600 ms window")
        if self.isi_ms < 600.0:
            raise ValueError("isi_ms must be >= 600 so post-stimulus windows never overlap")
        if self.channel_gain and len(self.channel_gain) != self.n_channels:
            raise ValueError(f"channel_gain has {len(self.channel_gain)} entries for {self.n_channels} channels")
        if any(not 0.0 <= g <= 1.0 for g in self.channel_gain):
            raise ValueError("channel_gain entries must lie in [0, 1]")
        if self.channel_names and len(self.channel_names) != self.n_channels:
            raise ValueError("channel_names length must equal n_channels")
        if not self.channel_names and self.n_channels > len(MONTAGE_ORDER):
            raise ValueError("more than 64 channels requires explicit channel_names")

    @property
    def gains(self) -> np.ndarray:
        if self.channel_gain:
            return np.asarray(self.channel_gain)
        return np.ones(self.n_channels)

    @property
    def names(self) -> tuple[str, ...]:
        return self.channel_names or MONTAGE_ORDER[: self.n_channels]


def p300_waveform(cfg: SynthesisConfig) -> np.ndarray:
    """Unit-peak Gaussian pulse over one 600 ms window; width is the FWHM."""
    n = round(0.6 * cfg.sample_rate_hz)
    t_ms = np.arange(n) * 1000.0 / cfg.sample_rate_hz
    sd = cfg.p300_width_ms / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    return np.exp(-0.5 * ((t_ms - cfg.p300_latency_ms) / sd) ** 2)


def synthesize(cfg: SynthesisConfig) -> Recording:
    """Simulate a speller session: per character, ``repeats`` trials of 12 flashes.

    Each character attends one row (codes 1-6) and one column (7-12); those
    two flashes per trial are targets and get the P300 pulse added.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    rate = cfg.sample_rate_hz
    isi = round(cfg.isi_ms * rate / 1000.0)
    lead = rate  # one second of signal before the first flash and after the last
    n_events = cfg.n_characters * cfg.repeats_per_character * CODES_PER_TRIAL
    n_samples = 2 * lead + (n_events - 1) * isi + round(0.6 * rate)

    events = []
    k = 0
    for _ in range(cfg.n_characters):
        row = int(rng.integers(1, 7))
        col = int(rng.integers(7, 13))
        for _ in range(cfg.repeats_per_character):
            for code in rng.permutation(np.arange(1, CODES_PER_TRIAL + 1)):
                code = int(code)
                events.append(StimulusEvent(lead + k * isi, code, code in (row, col)))
                k += 1

    samples = rng.normal(0.0, cfg.noise_sd, size=(cfg.n_channels, n_samples))
    pulse = p300_waveform(cfg)
    amp = cfg.snr * cfg.noise_sd * cfg.gains[:, None]
    for ev in events:
        if ev.is_target:
            samples[:, ev.sample_index : ev.sample_index + pulse.size] += amp * pulse
    meta = {"session": f"synth-{cfg.rng_seed}", "subject": "synthetic"}
    return Recording(rate, make_channels(cfg.names), samples.astype(np.float32), events, meta)


def trials(rec: Recording):
    """Split the event list into consecutive blocks of 12 flashes."""
    ev = rec.events
    return [ev[i : i + CODES_PER_TRIAL] for i in range(0, len(ev), CODES_PER_TRIAL)]
