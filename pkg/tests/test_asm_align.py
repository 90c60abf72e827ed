import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_alignments

from scorefollow.asm_align import (
    DIAG,
    DOWN,
    GAP,
    LEFT,
    AlignmentReport,
    AlignmentTuple,
    ASMConfig,
    align,
    alignment_score,
    emit_reference,
    fill_grid,
    format_report,
    post_align,
    report,
    similarity,
    sort_parallel_score_notes,
    trace,
)
from scorefollow.midi_io import NoteEvent, ScoreDocument

LETTERS = {c: k for k, c in enumerate("ABCDE")}
UNIT = ASMConfig(match_score=1, mismatch_floor=-1, gap_penalty=-1)


def codes(s):
    return [LETTERS[c] for c in s]


def letters(tuples):
    back = "ABCDE"
    return [(GAP if t.perf is GAP else back[t.perf], GAP if t.score is GAP else back[t.score])
            for t in tuples]


def n(t, p):
    return NoteEvent(float(t), p)


# ---------------------------------------------------------------- similarity


@pytest.mark.parametrize("c1,c2,expected", [(60, 60, 1), (60, 63, -3), (60, 90, -12), (90, 60, -12)])
def test_similarity(c1, c2, expected):
    assert similarity(c1, c2) == expected


def test_config_validation():
    with pytest.raises(ValueError):
        ASMConfig(match_score=-1)
    with pytest.raises(ValueError):
        ASMConfig(gap_penalty=1)


# ---------------------------------------------------------------- grid


def test_example_cells():
    g = fill_grid(codes("ABCDABE"), codes("ACDDCBC"), UNIT)
    assert g.score(2, 2) == 1
    assert g.score(3, 2) == 0
    assert g.score(2, 3) == 0
    assert g.score(3, 3) == 0
    assert g.score(8, 8) == 0
    assert g.final_score == 0


def test_tied_cell_keeps_both_arrows():
    g = fill_grid(codes("ABCDABE"), codes("ACDDCBC"), UNIT)
    assert g.arrows[5, 5] & DIAG and g.arrows[5, 5] & DOWN
    assert not g.arrows[5, 5] & LEFT


def test_identical_sequences_score_k_on_the_diagonal():
    g = fill_grid([3, 1, 4, 1, 5], [3, 1, 4, 1, 5])
    assert [g.score(k, k) for k in range(1, 7)] == [0, 1, 2, 3, 4, 5]


def test_sparse_grid_matches_dense_final_score():
    rng = np.random.default_rng(0)
    P, S = rng.integers(50, 70, 40), rng.integers(50, 70, 35)
    dense = fill_grid(P, S, keep_scores=True)
    sparse = fill_grid(P, S, keep_scores=False)
    assert sparse.scores is None
    assert sparse.final_score == dense.final_score
    assert np.array_equal(sparse.arrows, dense.arrows)


# ---------------------------------------------------------------- trace


def test_example_trace():
    P, S = codes("ABCDABE"), codes("ACDDCBC")
    out = trace(fill_grid(P, S, UNIT), P, S)
    assert letters(out) == [("A", "A"), ("B", GAP), ("C", "C"), ("D", "D"), ("A", "D"),
                            (GAP, "C"), ("B", "B"), ("E", "C")]


def test_identical_sequences_all_match():
    P = [60, 62, 64, 65]
    out = trace(fill_grid(P, P), P, P)
    assert all(t.is_match for t in out) and len(out) == 4


def test_single_mismatch_beats_two_gaps():
    out = trace(fill_grid(codes("A"), codes("B"), UNIT), codes("A"), codes("B"))
    assert len(out) == 1 and out[0].is_mismatch


pitch_lists = st.lists(st.integers(55, 62), min_size=0, max_size=6)


@settings(max_examples=150, deadline=None)
@given(pitch_lists, pitch_lists)
def test_grid_score_is_the_enumerated_optimum(P, S):
    cfg = ASMConfig()
    best = brute_force_alignments(P, S, lambda a, b: similarity(a, b, cfg), cfg.gap_penalty)
    g = fill_grid(P, S, cfg)
    assert g.final_score == best
    out = trace(g, P, S)
    assert alignment_score(out, cfg) == best
    assert [t.perf for t in out if t.perf is not GAP] == P
    assert [t.score for t in out if t.score is not GAP] == S
    assert not any(t.perf is GAP and t.score is GAP for t in out)


# ---------------------------------------------------------------- parallel notes


def test_sort_parallel_notes():
    doc = ScoreDocument([n(0, 64), n(0, 60), n(0, 67)])
    assert sort_parallel_score_notes(doc).events == [n(0, 60), n(0, 64), n(0, 67)]


def test_sort_parallel_notes_idempotent_and_identity():
    doc = ScoreDocument([n(0, 60), n(0, 64), n(10, 50), n(20, 70)])
    assert sort_parallel_score_notes(doc).events == doc.events
    once = sort_parallel_score_notes(ScoreDocument([n(0, 5), n(0, 1)]))
    assert sort_parallel_score_notes(once).events == once.events


# ---------------------------------------------------------------- post-alignment


def test_post_align_merges_gap_pair():
    a_p, b_p = n(100, 0), n(200, 1)
    b_s, a_s = n(0, 1), n(0, 0)
    tuples = [AlignmentTuple(a_p, GAP), AlignmentTuple(b_p, b_s), AlignmentTuple(GAP, a_s)]
    out = post_align(tuples, threshold_ms=50)
    assert out == [AlignmentTuple(a_p, a_s), AlignmentTuple(b_p, b_s)]


def test_post_align_repairs_gap_and_mismatch_cluster():
    a_p, b_p, c_p = n(100, 0), n(101, 1), n(102, 2)
    a_s, b_s, c_s = n(0, 0), n(0, 1), n(0, 2)
    tuples = [AlignmentTuple(a_p, GAP), AlignmentTuple(b_p, b_s),
              AlignmentTuple(GAP, c_s), AlignmentTuple(c_p, a_s)]
    out = post_align(tuples, threshold_ms=10)
    assert out == [AlignmentTuple(a_p, a_s), AlignmentTuple(b_p, b_s), AlignmentTuple(c_p, c_s)]


def test_post_align_zero_threshold_leaves_distant_notes():
    tuples = [AlignmentTuple(n(100, 0), GAP), AlignmentTuple(n(200, 1), n(500, 1)),
              AlignmentTuple(GAP, n(1000, 0))]
    assert post_align(tuples, threshold_ms=0) == tuples


def test_post_align_shifts_a_chain_of_cross_chord_matches():
    # the aligner paired each 61 with the score note one chord later
    p600, p700, p800 = n(600, 61), n(700, 61), n(800, 61)
    s600, s700, s800 = n(600, 61), n(700, 61), n(800, 61)
    tuples = [AlignmentTuple(GAP, s600), AlignmentTuple(n(600, 62), n(600, 62)),
              AlignmentTuple(p600, s700), AlignmentTuple(n(700, 67), n(700, 67)),
              AlignmentTuple(p700, s800), AlignmentTuple(p800, GAP), AlignmentTuple(n(800, 59), n(800, 59))]
    out = post_align(tuples, threshold_ms=0)
    assert report(out).errors == 0
    assert {(t.perf.onset_ms, t.score.onset_ms) for t in out if t.perf.midi_note == 61} == {
        (600, 600), (700, 700), (800, 800)}


def test_post_align_gap_at_the_edge_is_anchored_on_one_side():
    tuples = [AlignmentTuple(GAP, n(0, 56)), AlignmentTuple(n(0, 56), n(100, 56)),
              AlignmentTuple(n(100, 65), n(100, 65)), AlignmentTuple(n(100, 56), GAP)]
    out = post_align(tuples, threshold_ms=0)
    assert report(out).errors == 0


def test_post_align_rejects_negative_threshold():
    with pytest.raises(ValueError):
        post_align([], -1)


def _chordal(rng, n_chords):
    notes = []
    for k in range(n_chords):
        for p in rng.choice(np.arange(48, 80), size=rng.integers(1, 4), replace=False):
            notes.append(n(k * 100, int(p)))
    return notes


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_post_align_preserves_notes_and_never_adds_errors(n_chords, seed):
    rng = np.random.default_rng(seed)
    score = _chordal(rng, n_chords)
    perf = [score[k] for k in rng.permutation(len(score))]
    perf = sorted(perf, key=lambda e: e.onset_ms)  # shuffle within chords only
    tuples = align(ScoreDocument(perf), ScoreDocument(score))
    fixed = post_align(tuples, threshold_ms=0)
    key = lambda e: (e.onset_ms, e.midi_note)
    assert sorted((t.perf for t in fixed if t.perf is not GAP), key=key) == sorted(perf, key=key)
    assert sorted((t.score for t in fixed if t.score is not GAP), key=key) == sorted(score, key=key)
    assert report(fixed).errors <= report(tuples).errors


# ---------------------------------------------------------------- end to end and output


def test_align_with_permuted_parallel_voices():
    score = ScoreDocument([n(0, 60), n(0, 64), n(0, 67), n(500, 62), n(500, 65), n(1000, 60)])
    perf = ScoreDocument([n(10, 67), n(12, 60), n(15, 64), n(505, 65), n(510, 62), n(1003, 60)])
    tuples = align(perf, score, ASMConfig(post_align_threshold=0))
    rep = report(tuples)
    assert rep.mismatches == rep.gaps_in_score == rep.gaps_in_performance == 0
    assert all(t.perf.midi_note == t.score.midi_note for t in tuples)


def test_emit_reference_formats():
    out = emit_reference([AlignmentTuple(n(100, 60), n(0, 60)),
                          AlignmentTuple(n(134664.1666666667, 72), GAP),
                          AlignmentTuple(GAP, n(5, 61)),
                          AlignmentTuple(n(7, 40), n(8, 41))])
    assert out.splitlines() == [
        "100.0 0.0 60",
        "// GAP: 134664.1666666667 72 - GAP",
        "// GAP: GAP - 5.0 61",
        "// MISMATCH: 7.0 40 - 8.0 41",
    ]


def test_empty_alignment_report():
    assert emit_reference([]) == ""
    rep = report([])
    assert rep == AlignmentReport(0, 0, 0, 0)
    text = format_report(rep)
    assert "Length of alignment: 0" in text
    assert "Total number of mismatches: 0" in text


def test_format_report_mentions_threshold():
    assert format_report(AlignmentReport(1, 0, 0, 0), 50.0).startswith("Running PostAlign with threshold 50.0")


def test_alignment_tuple_rejects_double_gap():
    with pytest.raises(ValueError):
        AlignmentTuple(GAP, GAP)
