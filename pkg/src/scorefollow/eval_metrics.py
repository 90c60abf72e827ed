"""Evaluation of follower output against reference alignments.

Follower records carry (est_time, det_time, note_start, pitch); reference
records carry (tru_time, note_start, pitch).  Records are matched on pitch
and score time, then error/latency/offset statistics are computed over the
correctly aligned notes.
"""

from __future__ import annotations

import bisect
import logging
import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

log = logging.getLogger(__name__)

DEFAULT_THETA_MS = 300.0
DEFAULT_SEARCH_BOUND_MS = 1.0


class EmptyReferenceError(ValueError):
    pass


class RecordParseError(ValueError):
    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class FollowerRecord:
    est_time: float
    det_time: float
    note_start: float
    midi_note_num: int

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.est_time, self.det_time, self.note_start)):
            raise ValueError("follower record times must be finite")
        if self.det_time < self.est_time:
            raise ValueError(f"det_time {self.det_time} precedes est_time {self.est_time}")


@dataclass(frozen=True)
class ReferenceRecord:
    tru_time: float
    note_start: float
    midi_note_num: int

    def __post_init__(self):
        if not all(math.isfinite(v) and v >= 0 for v in (self.tru_time, self.note_start)):
            raise ValueError("reference record times must be finite and >= 0")


@dataclass
class MatchResult:
    pairs: list  # (FollowerRecord, ReferenceRecord)
    missed: list  # ReferenceRecord
    collisions: int = 0


@dataclass
class MetricsReport:
    n: int
    n_missed: int
    n_misaligned: int
    miss_rate: float
    misalign_rate: float
    precision_rate: float
    piece_completion: float
    error_std: Optional[float]
    mae: Optional[float]
    latency_mean: Optional[float]
    latency_std: Optional[float]
    mao: Optional[float]
    offset_std: Optional[float]

    @property
    def n_correct(self) -> int:
        return self.n - self.n_missed - self.n_misaligned

    def as_dict(self) -> dict:
        d = asdict(self)
        d["n_correct"] = self.n_correct
        return d


@dataclass
class SuiteReport:
    pieces: dict = field(default_factory=dict)  # name -> MetricsReport
    piecewise_precision: float = 0.0
    total_precision: float = 0.0


# --------------------------------------------------------------------------
# file formats


def _rows(text: str, ncols: int):
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("//"):
            continue
        parts = line.split()
        if len(parts) != ncols:
            raise RecordParseError(f"expected {ncols} columns, got {len(parts)}", lineno)
        try:
            yield lineno, [float(p) for p in parts[:-1]] + [int(parts[-1])]
        except ValueError:
            raise RecordParseError(f"non-numeric field in {line!r}", lineno) from None


def parse_follower_text(text: str) -> list[FollowerRecord]:
    out = []
    for lineno, (te, td, ts, p) in _rows(text, 4):
        try:
            out.append(FollowerRecord(te, td, ts, p))
        except ValueError as exc:
            raise RecordParseError(str(exc), lineno) from None
    return out


def parse_reference_text(text: str) -> list[ReferenceRecord]:
    out = []
    for lineno, (tr, ts, p) in _rows(text, 3):
        try:
            out.append(ReferenceRecord(tr, ts, p))
        except ValueError as exc:
            raise RecordParseError(str(exc), lineno) from None
    return out


def format_follower_text(records: Sequence[FollowerRecord]) -> str:
    return "".join(f"{r.est_time!r} {r.det_time!r} {r.note_start!r} {r.midi_note_num}\n" for r in records)


def format_reference_text(records: Sequence[ReferenceRecord]) -> str:
    return "".join(f"{r.tru_time!r} {r.note_start!r} {r.midi_note_num}\n" for r in records)


def read_follower_file(path) -> list[FollowerRecord]:
    return parse_follower_text(Path(path).read_text())


def read_reference_file(path) -> list[ReferenceRecord]:
    return parse_reference_text(Path(path).read_text())


# --------------------------------------------------------------------------
# matching and metrics


def closest_timestamp(timestamps: Sequence[float], query: float) -> float:
    """Element of an ascending list nearest to ``query``; ties go to the smaller one."""
    if not timestamps:
        raise ValueError("closest_timestamp of an empty list")
    k = bisect.bisect_left(timestamps, query)  # first element >= query
    if k == 0:
        return timestamps[0]
    if k == len(timestamps):
        return timestamps[-1]
    lo, hi = timestamps[k - 1], timestamps[k]
    return hi if hi - query < query - lo else lo


def _ref_key(r: ReferenceRecord):
    return (r.note_start, r.midi_note_num, r.tru_time)


def match_records(follower: Sequence[FollowerRecord], reference: Sequence[ReferenceRecord],
                  search_bound_ms: float = DEFAULT_SEARCH_BOUND_MS) -> MatchResult:
    """Pair each reference note with a follower note of the same pitch whose
    note_start lies within ``search_bound_ms``; each record is used once.

    Reference notes are processed in score order and take the nearest unused
    candidate (earlier one on ties).  A candidate already taken by another
    reference note counts as a collision and is logged.
    """
    if search_bound_ms < 0:
        raise ValueError("search bound must be >= 0")
    by_pitch: dict[int, list] = defaultdict(list)
    for r in sorted(follower, key=lambda f: (f.note_start, f.est_time, f.det_time)):
        by_pitch[r.midi_note_num].append(r)
    starts = {p: [r.note_start for r in rs] for p, rs in by_pitch.items()}
    used: dict[int, set] = defaultdict(set)

    pairs, missed, collisions = [], [], 0
    for ref in sorted(reference, key=_ref_key):
        cands = by_pitch.get(ref.midi_note_num)
        if not cands:
            missed.append(ref)
            continue
        st = starts[ref.midi_note_num]
        lo = bisect.bisect_left(st, ref.note_start - search_bound_ms)
        hi = bisect.bisect_right(st, ref.note_start + search_bound_ms)
        best = None
        taken = used[ref.midi_note_num]
        for k in range(lo, hi):
            if abs(st[k] - ref.note_start) > search_bound_ms:
                continue
            if k in taken:
                collisions += 1
                continue
            if best is None or abs(st[k] - ref.note_start) < abs(st[best] - ref.note_start):
                best = k
        if best is None:
            missed.append(ref)
        else:
            taken.add(best)
            pairs.append((cands[best], ref))
    if collisions:
        log.warning("%d follower records were claimed by more than one reference note "
                    "within the search bound; first come was kept", collisions)
    return MatchResult(pairs=pairs, missed=missed, collisions=collisions)


def _pop_std(values: Sequence[float]) -> float:
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def compute_metrics(pairs: Sequence, missed: Sequence[ReferenceRecord],
                    theta_ms: float = DEFAULT_THETA_MS) -> MetricsReport:
    """Aggregate metrics for one piece.

    ``missed`` may be the list of missed reference records or just their count;
    piece completion needs the records to know where the missed notes sit.
    """
    if theta_ms <= 0:
        raise ValueError("misalignment threshold must be > 0")
    missed_list = list(missed) if not isinstance(missed, int) else None
    n_m = len(missed_list) if missed_list is not None else missed
    n = len(pairs) + n_m
    if n == 0:
        raise EmptyReferenceError("no reference notes to evaluate")

    ordered = sorted(pairs, key=lambda fr: (_ref_key(fr[1]), fr[0].est_time, fr[0].det_time))
    errors = [f.est_time - r.tru_time for f, r in ordered]
    bad = [abs(e) >= theta_ms for e in errors]
    n_e = sum(bad)
    good = [(f, r, e) for (f, r), e, b in zip(ordered, errors, bad) if not b]
    n_c = len(good)

    r_m = n_m / n
    r_e = n_e / n
    r_p = 1.0 - r_m - r_e

    # piece completion: ignore the trailing run of wrong/missed notes in score order
    if n_c == 0:
        p_e = 0.0
    elif missed_list is None:
        p_e = n_c / n
    else:
        timeline = [(_ref_key(r), not b) for (f, r), b in zip(ordered, bad)]
        timeline += [(_ref_key(r), False) for r in missed_list]
        timeline.sort(key=lambda t: t[0])
        last_ok = max(k for k, (_, ok) in enumerate(timeline) if ok)
        trailing = len(timeline) - 1 - last_ok
        p_e = n_c / (n - trailing)

    err_std = mae = lat_mean = lat_std = mao = off_std = None
    if n_c:
        es = [e for _, _, e in good]
        err_std = math.sqrt(sum(e * e for e in es) / n_c)
        mae = sum(abs(e) for e in es) / n_c
        online = any(f.det_time != f.est_time for f, _ in pairs)
        if online:
            lat = [f.det_time - f.est_time for f, _, _ in good]
            off = [f.det_time - r.tru_time for f, r, _ in good]
            lat_mean = sum(lat) / n_c
            lat_std = _pop_std(lat)
            mao = sum(abs(o) for o in off) / n_c
            off_std = _pop_std(off)

    return MetricsReport(
        n=n, n_missed=n_m, n_misaligned=n_e,
        miss_rate=r_m, misalign_rate=r_e, precision_rate=r_p, piece_completion=p_e,
        error_std=err_std, mae=mae, latency_mean=lat_mean, latency_std=lat_std,
        mao=mao, offset_std=off_std,
    )


def evaluate(follower: Sequence[FollowerRecord], reference: Sequence[ReferenceRecord],
             theta_ms: float = DEFAULT_THETA_MS,
             search_bound_ms: float = DEFAULT_SEARCH_BOUND_MS) -> MetricsReport:
    m = match_records(follower, reference, search_bound_ms)
    return compute_metrics(m.pairs, m.missed, theta_ms)


def suite_metrics(reports: Sequence[MetricsReport]) -> tuple[float, float]:
    """(piecewise precision r_pp, total precision r_pt) over several pieces."""
    if not reports:
        raise ValueError("suite needs at least one piece")
    r_pp = sum(r.precision_rate for r in reports) / len(reports)
    r_pt = sum(r.n_correct for r in reports) / sum(r.n for r in reports)
    return r_pp, r_pt


# --------------------------------------------------------------------------
# bench runner (file / directory level)


def bench_pair(ref_path, out_path, theta_ms=DEFAULT_THETA_MS,
               search_bound_ms=DEFAULT_SEARCH_BOUND_MS) -> MetricsReport:
    return evaluate(read_follower_file(out_path), read_reference_file(ref_path),
                    theta_ms, search_bound_ms)


def bench_suite(ref_dir, out_dir, theta_ms=DEFAULT_THETA_MS,
                search_bound_ms=DEFAULT_SEARCH_BOUND_MS) -> SuiteReport:
    """Evaluate every reference file that has a same-named follower output."""
    ref_dir, out_dir = Path(ref_dir), Path(out_dir)
    suite = SuiteReport()
    for ref in sorted(p for p in ref_dir.iterdir() if p.is_file()):
        out = out_dir / ref.name
        if not out.exists():
            log.warning("no follower output for %s", ref.name)
            continue
        suite.pieces[ref.name] = bench_pair(ref, out, theta_ms, search_bound_ms)
    if not suite.pieces:
        raise ValueError(f"no matching files between {ref_dir} and {out_dir}")
    suite.piecewise_precision, suite.total_precision = suite_metrics(list(suite.pieces.values()))
    return suite


_COLUMNS = [
    ("n", "n"), ("r_m", "miss_rate"), ("r_e", "misalign_rate"), ("p_e", "piece_completion"),
    ("sigma_e", "error_std"), ("MAE", "mae"), ("sigma_l", "latency_std"), ("mu_l", "latency_mean"),
    ("sigma_o", "offset_std"), ("MAO", "mao"), ("r_p", "precision_rate"),
]


def _cell(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, int):
        return str(v)
    return f"{v:.4f}"


def format_table(reports: dict, suite: Optional[tuple[float, float]] = None) -> str:
    header = ["piece"] + [c for c, _ in _COLUMNS]
    rows = [[name] + [_cell(getattr(r, attr)) for _, attr in _COLUMNS] for name, r in reports.items()]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(row, widths)) for row in [header] + rows]
    if suite is not None:
        lines.append(f"r_pp = {suite[0]:.4f}  r_pt = {suite[1]:.4f}")
    return "\n".join(lines) + "\n"
