"""Tiny additive synthesizer and test pieces for the audio tests.

Also usable as the external synthesizer command:

    python tests/synth.py score.mid out.wav
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent / "src"))

from scorefollow.audio_io import write_wav
from scorefollow.midi_io import NoteEvent, ScoreDocument, read_midi, score_to_midi

SR = 44100
HARMONICS = (1.0, 0.5, 0.3, 0.2)


def midi_to_hz(p: float) -> float:
    return 440.0 * 2 ** ((p - 69) / 12)


def render(notes, sr: int = SR, note_len: float = 0.6, tail: float = 0.5) -> np.ndarray:
    """Sum of decaying harmonic tones, one per (onset_ms, pitch)."""
    notes = list(notes)
    end = max((n.onset_ms for n in notes), default=0.0) / 1000.0 + note_len + tail
    out = np.zeros(int(end * sr) + 1)
    n_len = int(note_len * sr)
    t = np.arange(n_len) / sr
    env = np.minimum(1.0, t / 0.01) * np.exp(-3.0 * t)
    env[-int(0.02 * sr):] *= np.linspace(1, 0, int(0.02 * sr))
    for n in notes:
        f = midi_to_hz(n.midi_note)
        tone = sum(a * np.sin(2 * np.pi * f * (k + 1) * t)
                   for k, a in enumerate(HARMONICS) if f * (k + 1) < sr / 2)
        start = int(round(n.onset_ms / 1000.0 * sr))
        out[start:start + n_len] += env * tone
    peak = np.abs(out).max()
    return out / peak * 0.8 if peak > 0 else out


def _doc(pairs) -> ScoreDocument:
    return ScoreDocument.from_unsorted(NoteEvent(float(t), int(p)) for t, p in pairs)


def scale_piece() -> ScoreDocument:
    steps = [0, 2, 4, 5, 7, 9, 11, 12, 14, 16, 17, 19, 21, 23, 24]
    pitches = [60 + s for s in steps] + [60 + s for s in reversed(steps[:-1])]
    return _doc((k * 300.0, p) for k, p in enumerate(pitches))


def two_voice_piece() -> ScoreDocument:
    melody = [72, 74, 76, 77, 79, 77, 76, 74, 72, 71, 72, 74, 76, 79, 77, 76]
    bass = [48, 55, 52, 53, 50, 55, 48, 43]
    pairs = [(k * 250.0, p) for k, p in enumerate(melody)]
    pairs += [(k * 500.0, p) for k, p in enumerate(bass)]
    pairs += [(4000.0 + k * 250.0, p) for k, p in enumerate(reversed(melody))]
    pairs += [(4000.0 + k * 500.0, p) for k, p in enumerate(reversed(bass))]
    return _doc(pairs)


def chord_piece() -> ScoreDocument:
    chords = [(60, 64, 67), (65, 69, 72), (67, 71, 74), (60, 64, 67),
              (57, 60, 64), (62, 65, 69), (55, 59, 62), (60, 64, 67, 72)]
    pairs = []
    for k, ch in enumerate(chords * 2):
        pairs += [(k * 600.0, p) for p in ch]
    return _doc(pairs)


PIECES = {"scale": scale_piece, "two_voice": two_voice_piece, "chords": chord_piece}


def tempo_warp(segment_ms: float = 1500.0, factors=(1.2, 0.8, 1.15, 0.85, 1.0)):
    """Piecewise-linear time map: score segment k is stretched by factors[k % len]."""

    def warp(t: float) -> float:
        out, pos, k = 0.0, 0.0, 0
        while pos + segment_ms <= t:
            out += segment_ms * factors[k % len(factors)]
            pos += segment_ms
            k += 1
        return out + (t - pos) * factors[k % len(factors)]

    return warp


def warp_piece(doc: ScoreDocument, warp=None) -> ScoreDocument:
    warp = warp or tempo_warp()
    return ScoreDocument([NoteEvent(warp(e.onset_ms), e.midi_note) for e in doc])


def write_piece(doc: ScoreDocument, wav_path, midi_path=None):
    write_wav(wav_path, render(doc), SR)
    if midi_path is not None:
        Path(midi_path).write_bytes(score_to_midi(doc))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: synth.py <in.mid> <out.wav>", file=sys.stderr)
        return 2
    write_wav(argv[1], render(read_midi(argv[0])), SR)
    return 0


if __name__ == "__main__":
    sys.exit(main())
