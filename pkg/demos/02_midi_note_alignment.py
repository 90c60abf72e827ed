"""
Aligning a MIDI performance to its score note by note
======================================================

The aligner only compares pitches, so chords played in a different order
than they are written show up as gaps and mismatches.  Sorting the score's
chords and running the post-alignment pass cleans those up.

    python3 demos/02_midi_note_alignment.py
"""

import random
import tempfile
from pathlib import Path

from scorefollow import ASMConfig, NoteEvent, ScoreDocument, align, read_midi
from scorefollow.asm_align import emit_reference, format_report, report
from scorefollow.midi_io import events_to_midi

# a short chorale: four chords, then a melody over a held bass
chords = [(0, [48, 55, 64]), (500, [53, 57, 65]), (1000, [55, 59, 62]), (1500, [48, 52, 60])]
notes = [(t, p) for t, ps in chords for p in ps]
notes += [(2000 + 250 * k, p) for k, p in enumerate([67, 65, 64, 62, 60])] + [(2000, 36)]
notes.sort()

# the performance: a little late, a little uneven, chord notes rolled in random order
rng = random.Random(3)
perf = []
for t, group in sorted({t: [p for tt, p in notes if tt == t] for t, _ in notes}.items()):
    rng.shuffle(group)
    for k, p in enumerate(group):
        perf.append((t * 1.1 + 40 + 8 * k, p))

# write both as Standard MIDI Files and read them back, as the CLI would
tmp = Path(tempfile.mkdtemp())
(tmp / "score.mid").write_bytes(events_to_midi(notes))
(tmp / "perf.mid").write_bytes(events_to_midi(perf))
score_doc = read_midi(tmp / "score.mid")
perf_doc = read_midi(tmp / "perf.mid")
print(f"{len(perf_doc)} performance notes, {len(score_doc)} score notes")

# %% Plain alignment
plain = align(perf_doc, score_doc)
print("\nwithout post-alignment:")
print(format_report(report(plain)), end="")

# %% With post-alignment; notes written at the same instant may be re-paired
fixed = align(perf_doc, score_doc, ASMConfig(post_align_threshold=0))
print("\nwith post-alignment at 0 ms:")
print(format_report(report(fixed), 0), end="")

# the reference file the evaluation tools read: perf onset, score onset, pitch
print("\nfirst lines of the reference output:")
print("\n".join(emit_reference(fixed).splitlines()[:6]))

# %% A wrong note stays visible as a mismatch
wrong = ScoreDocument([NoteEvent(e.onset_ms, e.midi_note + (1 if k == 13 else 0))
                       for k, e in enumerate(perf_doc)])
print("\nwith one wrong note:")
wrong_aligned = align(wrong, score_doc, ASMConfig(post_align_threshold=0))
print(format_report(report(wrong_aligned), 0), end="")
print("\n".join(line for line in emit_reference(wrong_aligned).splitlines() if line.startswith("//")))
