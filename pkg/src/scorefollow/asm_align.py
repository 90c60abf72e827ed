"""Global note alignment of a performance against a score (Needleman-Wunsch variant).

Only pitches take part in the alignment; onset times ride along so that the
result can be written out as a reference alignment and so that the
post-alignment pass can reason about parallel notes.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .midi_io import NoteEvent, ScoreDocument

GAP = None  # the empty side of an indel tuple

DIAG, LEFT, DOWN = 1, 2, 4

# grids beyond this many cells keep only the arrows, not the full score table
_DENSE_SCORE_LIMIT = 4_000_000


@dataclass(frozen=True)
class ASMConfig:
    match_score: float = 1.0
    mismatch_floor: float = -12.0
    gap_penalty: float = -1.0
    post_align_threshold: Optional[float] = None

    def __post_init__(self):
        if self.match_score <= 0:
            raise ValueError("match_score must be > 0")
        if self.mismatch_floor > 0 or self.gap_penalty > 0:
            raise ValueError("mismatch_floor and gap_penalty must be <= 0")
        if self.post_align_threshold is not None and self.post_align_threshold < 0:
            raise ValueError("post_align_threshold must be >= 0")


@dataclass(frozen=True)
class AlignmentTuple:
    perf: Optional[NoteEvent]
    score: Optional[NoteEvent]

    def __post_init__(self):
        if self.perf is GAP and self.score is GAP:
            raise ValueError("an alignment tuple cannot be a gap on both sides")

    @property
    def is_match(self) -> bool:
        return (self.perf is not GAP and self.score is not GAP
                and _pitch(self.perf) == _pitch(self.score))

    @property
    def is_mismatch(self) -> bool:
        return (self.perf is not GAP and self.score is not GAP
                and _pitch(self.perf) != _pitch(self.score))

    @property
    def is_error(self) -> bool:
        return not self.is_match


@dataclass(frozen=True)
class AlignmentReport:
    length: int
    gaps_in_performance: int
    gaps_in_score: int
    mismatches: int

    @property
    def errors(self) -> int:
        return self.gaps_in_performance + self.gaps_in_score + self.mismatches


@dataclass
class ASMGrid:
    """Filled alignment grid.

    Array index ``[x-1, y-1]`` holds the 1-based cell (x, y): x walks the
    performance, y the score, and (1, 1) is the empty-prefix corner.
    ``scores`` is None for grids too large to keep densely.
    """

    arrows: np.ndarray
    scores: Optional[np.ndarray]
    final_score: float

    def score(self, x: int, y: int) -> float:
        if self.scores is None:
            raise ValueError("grid was filled without keeping the score table")
        return float(self.scores[x - 1, y - 1])


def similarity(c1: int, c2: int, cfg: ASMConfig = ASMConfig()) -> float:
    if c1 == c2:
        return cfg.match_score
    return max(-abs(c1 - c2), cfg.mismatch_floor)


def _similarity_row(p: int, S: np.ndarray, cfg: ASMConfig) -> np.ndarray:
    sim = np.maximum(-np.abs(S - p).astype(float), cfg.mismatch_floor)
    sim[S == p] = cfg.match_score
    return sim


def fill_grid(P: Sequence[int], S: Sequence[int], cfg: ASMConfig = ASMConfig(),
              keep_scores: bool | None = None) -> ASMGrid:
    """Score every prefix pair; store an arrow for each clause attaining the max."""
    P = np.asarray(P, dtype=np.int64)
    S = np.asarray(S, dtype=np.int64)
    nx, ny = len(P) + 1, len(S) + 1
    if keep_scores is None:
        keep_scores = nx * ny <= _DENSE_SCORE_LIMIT
    g = cfg.gap_penalty
    arrows = np.zeros((nx, ny), dtype=np.uint8)
    arrows[0, 1:] = DOWN
    arrows[1:, 0] = LEFT
    scores = np.empty((nx, ny)) if keep_scores else None

    steps = np.arange(ny, dtype=float)
    prev = steps * g  # x = 1 border: cumulative gap penalties
    if keep_scores:
        scores[0] = prev
    for x in range(1, nx):
        sim = _similarity_row(int(P[x - 1]), S, cfg)
        diag = prev[:-1] + sim
        left = prev + g
        cand = left.copy()
        cand[1:] = np.maximum(diag, left[1:])
        # chain the down clause: cur[y] = max(cand[y], cur[y-1] + g)
        cur = np.maximum.accumulate(cand - steps * g) + steps * g
        arr = np.zeros(ny, dtype=np.uint8)
        arr[1:] |= np.where(cur[1:] == diag, DIAG, 0).astype(np.uint8)
        arr |= np.where(cur == left, LEFT, 0).astype(np.uint8)
        arr[1:] |= np.where(cur[1:] == cur[:-1] + g, DOWN, 0).astype(np.uint8)
        arrows[x] = arr
        if keep_scores:
            scores[x] = cur
        prev = cur
    return ASMGrid(arrows=arrows, scores=scores, final_score=float(prev[-1]))


def trace(grid: ASMGrid, perf: Sequence, score: Sequence) -> list[AlignmentTuple]:
    """One optimal alignment, walked back from the top-right cell.

    Where several arrows leave a cell the order is: diagonal if it is a
    match, then down, then left, then a mismatching diagonal.  So a tie
    between a wrong note and an indel is reported as the indel.
    ``perf``/``score`` are the aligned items (NoteEvents or plain pitches).
    """
    x, y = grid.arrows.shape[0] - 1, grid.arrows.shape[1] - 1
    out = []
    while x > 0 or y > 0:
        a = grid.arrows[x, y]
        diag_match = bool(a & DIAG) and _pitch(perf[x - 1]) == _pitch(score[y - 1])
        if diag_match or (a & DIAG and not a & (DOWN | LEFT)):
            out.append(AlignmentTuple(perf[x - 1], score[y - 1]))
            x, y = x - 1, y - 1
        elif a & DOWN:
            out.append(AlignmentTuple(GAP, score[y - 1]))
            y -= 1
        else:
            out.append(AlignmentTuple(perf[x - 1], GAP))
            x -= 1
    out.reverse()
    return out


def alignment_score(tuples: Sequence[AlignmentTuple], cfg: ASMConfig = ASMConfig()) -> float:
    total = 0.0
    for t in tuples:
        if t.perf is GAP or t.score is GAP:
            total += cfg.gap_penalty
        else:
            total += similarity(_pitch(t.perf), _pitch(t.score), cfg)
    return total


def _pitch(item) -> int:
    return item.midi_note if isinstance(item, NoteEvent) else item


def sort_parallel_score_notes(score: ScoreDocument) -> ScoreDocument:
    """Sort notes sharing an onset by ascending pitch; everything else keeps its order."""
    return ScoreDocument(sorted(score.events, key=lambda e: (e.onset_ms, e.midi_note)))


def _neighbour_times(slots: list, a: int, own: bool = True) -> Optional[tuple[float, float]]:
    """Score-time interval that anchors the performance note in slot ``a``.

    With ``own=False`` the slot's own score note is ignored, as if the
    performance note were a gap.  A side with no match is unbounded; with no
    match on either side there is nothing to anchor to.
    """
    t = slots[a]
    if own and t.score is not GAP:
        return t.score.onset_ms, t.score.onset_ms
    lo = next((slots[b].score.onset_ms for b in range(a - 1, -1, -1) if slots[b].is_match), None)
    hi = next((slots[b].score.onset_ms for b in range(a + 1, len(slots)) if slots[b].is_match), None)
    if lo is None and hi is None:
        return None
    lo = -math.inf if lo is None else lo
    hi = math.inf if hi is None else hi
    return min(lo, hi), max(lo, hi)


def _gap_to(interval: tuple[float, float], t: float) -> float:
    return max(interval[0] - t, t - interval[1], 0.0)


def post_align(tuples: Sequence[AlignmentTuple], threshold_ms: float) -> list[AlignmentTuple]:
    """Repair gap/mismatch clusters caused by the ordering of parallel notes.

    Greedy left-to-right: a performance note in an error tuple is re-paired
    with an unused score note of the same pitch from another error tuple,
    provided that score note lies within ``threshold_ms`` of the performance
    note's score-time neighbourhood: its mismatch partner, or for a gap the
    span between the nearest matched tuples on either side (error tuples
    are unreliable anchors).  The new pair takes the
    performance note's position; orphaned notes become gaps.

    When no error tuple qualifies, the note may take the score note of a
    pitch match whose own performance note is re-paired in turn, along the
    shortest such chain that ends at a qualifying error tuple.  This undoes
    matches the string aligner made across neighbouring chords that share a
    pitch.

    Each repair adds a match, so passes repeat until nothing changes.
    """
    if threshold_ms < 0:
        raise ValueError("threshold must be >= 0")
    slots: list = list(tuples)
    changed = True
    while changed:
        changed = False
        a = 0
        while a < len(slots):
            merged = _repair_at(slots, a, threshold_ms)
            if merged is None:
                a += 1
                continue
            slots, a = merged
            changed = True
    return slots


def _closest_error_score(slots: list, a: int, pitch: int, anchors: tuple[float, float], threshold_ms: float,
                         exclude=()):
    """Index of the error tuple whose score note best fits ``anchors``, or None."""
    best = None
    for b, tb in enumerate(slots):
        if b == a or b in exclude or tb.score is GAP or tb.is_match or tb.score.midi_note != pitch:
            continue
        dist = _gap_to(anchors, tb.score.onset_ms)
        if dist <= threshold_ms and (best is None or (dist, abs(b - a)) < best[0]):
            best = ((dist, abs(b - a)), b)
    return None if best is None else best[1]


def _repair_at(slots: list, a: int, threshold_ms: float):
    ta = slots[a]
    if ta.perf is GAP or ta.is_match:
        return None
    pitch = ta.perf.midi_note
    anchors = _neighbour_times(slots, a)
    if anchors is None:
        return None
    b = _closest_error_score(slots, a, pitch, anchors, threshold_ms)
    chain = [] if b is not None else _find_chain(slots, a, pitch, anchors, threshold_ms)
    if chain is None:
        return None
    if chain:
        b = chain.pop()
    new = list(slots)
    # each note in the chain hands its score note to the previous one
    takers = [a] + chain
    givers = chain + [b]
    for t, g in zip(takers, givers):
        new[t] = AlignmentTuple(slots[t].perf, slots[g].score)
    if ta.score is not GAP:
        new[a] = [new[a], AlignmentTuple(GAP, ta.score)]
    tb = slots[b]
    new[b] = AlignmentTuple(tb.perf, GAP) if tb.perf is not GAP else None
    # everything before the first touched slot was already unrepairable; resume there
    return _flatten(new), min(takers + [b])


def _find_chain(slots: list, a: int, pitch: int, anchors: tuple[float, float], threshold_ms: float):
    """Shortest run of same-pitch matches ending at a qualifying error tuple.

    Returns ``[m1, ..., mk, b]``: the note in slot ``a`` takes the score note
    of ``m1``, the performance note of ``m1`` takes that of ``m2``, and so on
    until the last performance note takes the score note of error tuple ``b``.
    """
    def fits(m, interval):
        return _gap_to(interval, slots[m].score.onset_ms) <= threshold_ms

    matches = [m for m, t in enumerate(slots) if m != a and t.is_match and t.score.midi_note == pitch]
    parent = {m: None for m in matches if fits(m, anchors)}
    frontier = list(parent)
    while frontier:
        nxt = []
        for m in frontier:
            own = _neighbour_times(slots, m, own=False)
            if own is None:
                continue
            b = _closest_error_score(slots, m, pitch, own, threshold_ms, exclude=(a,))
            if b is not None:
                chain = [b]
                while m is not None:
                    chain.append(m)
                    m = parent[m]
                return chain[::-1]
            for m2 in matches:
                if m2 not in parent and fits(m2, own):
                    parent[m2] = m
                    nxt.append(m2)
        frontier = nxt
    return None


def _flatten(slots: list) -> list:
    out = []
    for s in slots:
        if isinstance(s, list):
            out.extend(s)
        elif s is not None:
            out.append(s)
    return out


def align(perf: ScoreDocument, score: ScoreDocument, cfg: ASMConfig = ASMConfig()) -> list[AlignmentTuple]:
    """Full aligner: sort parallel score notes, align by pitch, optionally post-align."""
    score = sort_parallel_score_notes(score)
    grid = fill_grid(perf.pitches, score.pitches, cfg, keep_scores=False)
    tuples = trace(grid, perf.events, score.events)
    if cfg.post_align_threshold is not None:
        tuples = post_align(tuples, cfg.post_align_threshold)
    return tuples


def report(tuples: Sequence[AlignmentTuple]) -> AlignmentReport:
    return AlignmentReport(
        length=len(tuples),
        gaps_in_performance=sum(t.perf is GAP for t in tuples),
        gaps_in_score=sum(t.score is GAP for t in tuples),
        mismatches=sum(t.is_mismatch for t in tuples),
    )


def _note(e: Optional[NoteEvent]) -> str:
    return "GAP" if e is GAP else f"{e.onset_ms!r} {e.midi_note}"


def emit_reference(tuples: Sequence[AlignmentTuple]) -> str:
    """Reference-format lines (``tru_time note_start pitch``) plus comment lines for errors."""
    lines = []
    for t in tuples:
        if t.is_match:
            lines.append(f"{t.perf.onset_ms!r} {t.score.onset_ms!r} {t.score.midi_note}")
        elif t.is_mismatch:
            lines.append(f"// MISMATCH: {_note(t.perf)} - {_note(t.score)}")
        else:
            lines.append(f"// GAP: {_note(t.perf)} - {_note(t.score)}")
    return "".join(line + "\n" for line in lines)


def format_report(rep: AlignmentReport, post_align_threshold: Optional[float] = None) -> str:
    lines = []
    if post_align_threshold is not None:
        lines.append(f"Running PostAlign with threshold {post_align_threshold}")
    lines += [
        f"Length of alignment: {rep.length}",
        f"Total number of gaps in performance: {rep.gaps_in_performance}",
        f"Total number of gaps in score: {rep.gaps_in_score}",
        f"Total number of mismatches: {rep.mismatches}",
    ]
    return "".join(line + "\n" for line in lines)
