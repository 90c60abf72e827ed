"""
Constant-Q features and time warping on a toy melody
=====================================================

Render a melody twice (once as written, once played unevenly), turn both
into constant-Q feature vectors, and line them up with the offline and the
online warping algorithms.

    python3 demos/01_features_and_warping.py
"""

import numpy as np

from scorefollow import CQTParams, OLTWConfig, build_filterbank, classical_dtw, extract_features, oltw_run
from scorefollow.cqt_features import feature_matrix

SR = 44100


def tone_sum(onsets_pitches, length_s):
    # a plain harmonic tone with a short attack and exponential decay per note
    out = np.zeros(int(length_s * SR))
    t = np.arange(int(0.5 * SR)) / SR
    env = np.minimum(1, t / 0.01) * np.exp(-4 * t)
    for onset, pitch in onsets_pitches:
        f = 440 * 2 ** ((pitch - 69) / 12)
        note = env * (np.sin(2 * np.pi * f * t) + 0.4 * np.sin(4 * np.pi * f * t))
        k = int(onset * SR)
        out[k:k + len(note)] += note[:len(out) - k]
    return out


pitches = [60, 62, 64, 65, 67, 65, 64, 62, 60]
score = tone_sum([(0.4 * k, p) for k, p in enumerate(pitches)], 4.2)
# the performer rushes the first half and drags the second
perf_onsets = np.cumsum([0] + [0.3] * 4 + [0.5] * 4)
performance = tone_sum(zip(perf_onsets, pitches), 4.8)

# %% Features
params = CQTParams()
bank = build_filterbank(params)
print(f"{bank.n_bins} bins from {bank.center_freqs[0]:.1f} Hz to {bank.center_freqs[-1]:.1f} Hz, "
      f"one vector every {params.hop_ms:.1f} ms")

S = feature_matrix(extract_features(score, params, "nsgt", bank))
P = feature_matrix(extract_features(performance, params, "nsgt", bank))
print("score features:", S.shape, " performance features:", P.shape)

# each vector sums to one, so the strongest bin tells which note sounds
print("loudest bin in the first frames of the score:", S[:12].argmax(axis=1))

# %% Offline alignment: the full cost grid, then the cheapest path back
cost, path = classical_dtw(S, P)
print(f"\noffline path cost {cost:.2f} over {len(path)} steps")

# %% Online alignment: the performance arrives one frame at a time
online, _, _ = oltw_run(S, P, OLTWConfig(search_window_c=60))
print(f"online path has {len(online)} points")

# the online history holds (i', j') after each step; carry the last estimate
# forward so every performance frame has a score position
online_at = np.zeros(len(P) + 1, dtype=int)
for i, j in online:
    online_at[i:] = j
offline_at = np.zeros(len(P) + 1, dtype=int)
for i, j in path:
    offline_at[i] = max(offline_at[i], j)

hop_s = params.hop_ms / 1000
print("\n perf onset   offline   online   written")
for k, onset in enumerate(perf_onsets):
    i = min(len(P), int(round(onset / hop_s)) + 1)
    print(f"{onset:9.2f} s {(offline_at[i] - 1) * hop_s:7.2f} s {(online_at[i] - 1) * hop_s:6.2f} s"
          f" {0.4 * k:7.2f} s")
