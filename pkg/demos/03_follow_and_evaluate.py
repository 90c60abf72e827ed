"""
Following a rendered performance and scoring the follower
==========================================================

Render a score and a tempo-warped performance to WAV, run the follower in
offline and online modes, and compare its note onsets with the known truth.

    python3 demos/03_follow_and_evaluate.py
"""

import tempfile
from pathlib import Path

import numpy as np

from scorefollow import NoteEvent, ScoreDocument
from scorefollow.audio_io import write_wav
from scorefollow.eval_metrics import ReferenceRecord, evaluate, format_table, suite_metrics
from scorefollow.follower_pipeline import PipelineConfig, run
from scorefollow.midi_io import format_score_text

SR = 44100


def render(doc, tail=1.0):
    end = doc.events[-1].onset_ms / 1000 + tail
    out = np.zeros(int(end * SR))
    t = np.arange(int(0.6 * SR)) / SR
    env = np.minimum(1, t / 0.01) * np.exp(-3 * t)
    for e in doc:
        f = 440 * 2 ** ((e.midi_note - 69) / 12)
        note = env * sum(a * np.sin(2 * np.pi * f * h * t) for h, a in ((1, 1), (2, 0.5), (3, 0.3)))
        k = int(e.onset_ms / 1000 * SR)
        out[k:k + len(note)] += note[:len(out) - k]
    return 0.3 * out / np.abs(out).max()


# an arpeggiated chord progression, 24 notes at 300 ms
arp = [60, 64, 67, 72, 57, 60, 64, 69, 53, 57, 60, 65, 55, 59, 62, 67, 48, 52, 55, 60, 43, 47, 50, 55]
score = ScoreDocument([NoteEvent(300.0 * k, p) for k, p in enumerate(arp)])

# the performance speeds up by 20% then slows down by 20%
tempo = np.where(np.arange(len(arp)) < 12, 0.8, 1.2)
onsets = np.concatenate([[0.0], np.cumsum(300.0 * tempo[:-1])])
perf = ScoreDocument([NoteEvent(float(t), e.midi_note) for t, e in zip(onsets, score)])

tmp = Path(tempfile.mkdtemp())
write_wav(tmp / "score.wav", render(score), SR)
write_wav(tmp / "perf.wav", render(perf), SR)
(tmp / "score.txt").write_text(format_score_text(score))
print(f"score {score.events[-1].onset_ms / 1000:.1f} s, performance {perf.events[-1].onset_ms / 1000:.1f} s")

# ground truth: where each score note really starts in the performance
truth = [ReferenceRecord(p.onset_ms, s.onset_ms, s.midi_note) for p, s in zip(perf, score)]

# %% Run the follower three ways
reports = {}
for name, kw in [("offline", dict(mode="offline")),
                 ("online nsgt", dict(cqt_method="nsgt")),
                 ("online pseudo", dict(cqt_method="pseudo"))]:
    cfg = PipelineConfig(score_input=str(tmp / "score.wav"), performance_input=str(tmp / "perf.wav"),
                         score_notes=str(tmp / "score.txt"), **kw)
    result = run(cfg)
    reports[name] = evaluate(result.records, truth)

print()
print(format_table(reports, suite_metrics(list(reports.values()))))

# %% A closer look at the online errors, note by note
online = run(PipelineConfig(score_input=str(tmp / "score.wav"), performance_input=str(tmp / "perf.wav"),
                            score_notes=str(tmp / "score.txt")))
est = {(r.note_start, r.midi_note_num): r.est_time for r in online.records}
print("\nscore t   true t   estimated   error")
for ref in truth[::3]:
    e = est.get((ref.note_start, ref.midi_note_num))
    if e is None:
        print(f"{ref.note_start:7.0f}  {ref.tru_time:7.0f}   (not reported)")
    else:
        print(f"{ref.note_start:7.0f}  {ref.tru_time:7.0f}  {e:9.0f}  {e - ref.tru_time:+6.0f} ms")
