"""Standard MIDI File reading/writing and the plain-text score format.

Only note onsets survive parsing: note-offs, velocities, channels and
durations are dropped.  Onsets are resolved against the file's tempo map
and reported in milliseconds.
"""

from __future__ import annotations

import bisect
import math
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 BPM)
DEFAULT_TPQ = 480


class MidiParseError(ValueError):
    """Malformed SMF content; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedMidiError(ValueError):
    pass


class ScoreTextError(ValueError):
    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class NoteEvent:
    onset_ms: float
    midi_note: int

    def __post_init__(self):
        if not (0 <= self.midi_note <= 127):
            raise ValueError(f"midi_note out of range: {self.midi_note}")
        if not math.isfinite(self.onset_ms) or self.onset_ms < 0:
            raise ValueError(f"onset_ms must be finite and >= 0: {self.onset_ms}")


@dataclass
class ScoreDocument:
    """Note onsets ordered by time (ties keep their input order)."""

    events: list[NoteEvent] = field(default_factory=list)

    def __post_init__(self):
        self.events = list(self.events)
        for a, b in zip(self.events, self.events[1:]):
            if b.onset_ms < a.onset_ms:
                raise ValueError("ScoreDocument events must have nondecreasing onset_ms")

    @classmethod
    def from_unsorted(cls, events: Iterable[NoteEvent]) -> ScoreDocument:
        return cls(sorted(events, key=lambda e: e.onset_ms))

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, i):
        return self.events[i]

    @property
    def onsets_ms(self) -> list[float]:
        return [e.onset_ms for e in self.events]

    @property
    def pitches(self) -> list[int]:
        return [e.midi_note for e in self.events]


# --------------------------------------------------------------------------
# SMF reading


def _read_vlq(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MidiParseError("truncated variable-length quantity", pos)
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(data: bytes, start: int, end: int, track_no: int, notes: list, tempos: list):
    pos = start
    tick = 0
    status = None
    order = 0
    while pos < end:
        delta, pos = _read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise MidiParseError("truncated event", pos)
        b = data[pos]
        if b == 0xFF:
            if pos + 2 > end:
                raise MidiParseError("truncated meta event", pos)
            mtype = data[pos + 1]
            length, p = _read_vlq(data, pos + 2, end)
            if p + length > end:
                raise MidiParseError("meta event overruns track", pos)
            if mtype == 0x51:
                if length != 3:
                    raise MidiParseError("tempo meta event must carry 3 bytes", pos)
                tempos.append((tick, int.from_bytes(data[p:p + 3], "big"), track_no, order))
            pos = p + length
            if mtype == 0x2F:
                break
            continue
        if b in (0xF0, 0xF7):
            length, p = _read_vlq(data, pos + 1, end)
            if p + length > end:
                raise MidiParseError("sysex event overruns track", pos)
            pos = p + length
            status = None
            continue
        if b & 0x80:
            status = b
            pos += 1
        elif status is None:
            raise MidiParseError("running status without a prior status byte", pos)
        kind = status & 0xF0
        n = _DATA_LEN.get(kind)
        if n is None:
            raise MidiParseError(f"unknown status byte 0x{status:02X}", pos)
        if pos + n > end:
            raise MidiParseError("truncated channel event", pos)
        if kind == 0x90 and data[pos + 1] > 0:
            pitch = data[pos]
            if pitch > 127:
                raise MidiParseError("pitch byte out of range", pos)
            notes.append((tick, track_no, order, pitch))
        pos += n
        order += 1


def _tick_to_ms_fn(tempos: list, tpq: int):
    """Piecewise-linear tick -> ms map from (tick, us_per_quarter) changes."""
    changes = sorted(tempos, key=lambda t: (t[0], t[2], t[3]))
    ticks = [0]
    rates = [DEFAULT_TEMPO]
    for tick, tempo, *_ in changes:
        if tick == ticks[-1]:
            rates[-1] = tempo
        else:
            ticks.append(tick)
            rates.append(tempo)
    base_ms = [0.0]
    for k in range(1, len(ticks)):
        base_ms.append(base_ms[-1] + (ticks[k] - ticks[k - 1]) * rates[k - 1] / tpq / 1000.0)

    def convert(tick: int) -> float:
        k = bisect.bisect_right(ticks, tick) - 1
        return base_ms[k] + (tick - ticks[k]) * rates[k] / tpq / 1000.0

    return convert


def parse_midi(data: bytes) -> ScoreDocument:
    """Parse SMF bytes (type 0 or 1) into a time-ordered onset list."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or 8 + hlen > len(data):
        raise MidiParseError("bad header length", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if division & 0x8000:
        raise UnsupportedMidiError("SMPTE time division is not supported")
    if fmt not in (0, 1):
        raise UnsupportedMidiError(f"SMF format {fmt} is not supported")
    if division == 0:
        raise MidiParseError("zero ticks per quarter note", 12)

    notes: list = []
    tempos: list = []
    pos = 8 + hlen
    for track_no in range(ntracks):
        if pos + 8 > len(data):
            raise MidiParseError("missing track chunk", pos)
        cid = data[pos:pos + 4]
        clen = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        if pos + 8 + clen > len(data):
            raise MidiParseError("track chunk overruns file", pos)
        if cid == b"MTrk":
            _parse_track(data, pos + 8, pos + 8 + clen, track_no, notes, tempos)
        elif track_no == 0 and cid != b"MTrk":
            raise MidiParseError(f"expected MTrk chunk, found {cid!r}", pos)
        pos += 8 + clen

    to_ms = _tick_to_ms_fn(tempos, division)
    notes.sort(key=lambda n: (n[0], n[1], n[2]))
    return ScoreDocument([NoteEvent(to_ms(tick), pitch) for tick, _, _, pitch in notes])


def read_midi(path) -> ScoreDocument:
    with open(path, "rb") as f:
        return parse_midi(f.read())


# --------------------------------------------------------------------------
# SMF writing


def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def events_to_midi(events: Iterable[tuple[float, int]], duration_ms: float = 250.0,
                   tpq: int = DEFAULT_TPQ, tempo: int = DEFAULT_TEMPO) -> bytes:
    """Write ``(onset_ms, pitch)`` pairs as a single-track type-0 SMF."""
    ms_per_tick = tempo / tpq / 1000.0
    timeline = []
    for seq, (onset, pitch) in enumerate(events):
        pitch = int(pitch)
        if not (0 <= pitch <= 127):
            raise ValueError(f"pitch out of range: {pitch}")
        if not math.isfinite(onset) or onset < 0:
            raise ValueError(f"onset must be finite and >= 0: {onset}")
        on = round(onset / ms_per_tick)
        off = on + max(1, round(duration_ms / ms_per_tick))
        # offs sort before ons at the same tick so repeated pitches stay separate
        timeline.append((on, 1, seq, 0x90, pitch, 64))
        timeline.append((off, 0, seq, 0x80, pitch, 0))
    timeline.sort()

    body = bytearray()
    body += b"\x00\xFF\x51\x03" + tempo.to_bytes(3, "big")
    last = 0
    for tick, _, _, status, pitch, vel in timeline:
        body += _vlq(tick - last) + bytes([status, pitch, vel])
        last = tick
    body += b"\x00\xFF\x2F\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, tpq)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def score_to_midi(doc: ScoreDocument, **kwargs) -> bytes:
    return events_to_midi(((e.onset_ms, e.midi_note) for e in doc), **kwargs)


def reference_to_midi(records: Sequence, **kwargs) -> bytes:
    """Reference records -> SMF, placing each note at its ``tru_time``."""
    return events_to_midi(((r.tru_time, r.midi_note_num) for r in records), **kwargs)


# --------------------------------------------------------------------------
# two-column score text


def format_score_text(doc: ScoreDocument) -> str:
    return "".join(f"{e.onset_ms!r} {e.midi_note}\n" for e in doc)


def parse_score_text(text: str) -> ScoreDocument:
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("//"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ScoreTextError(f"expected 2 columns, got {len(parts)}", lineno)
        try:
            onset = float(parts[0])
            pitch = int(parts[1])
        except ValueError:
            raise ScoreTextError(f"non-numeric field in {line!r}", lineno) from None
        try:
            events.append(NoteEvent(onset, pitch))
        except ValueError as exc:
            raise ScoreTextError(str(exc), lineno) from None
    return ScoreDocument.from_unsorted(events)
