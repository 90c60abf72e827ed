"""Classical DTW and Online Time Warping over feature-vector sequences.

Indices follow the follower's convention: ``i`` walks the performance
sequence P, ``j`` walks the score sequence S, both 1-based.  The cumulative
cost is

    D(i, j) = min(w_a*d + D(i, j-1), w_b*d + D(i-1, j), w_c*d + D(i-1, j-1))

with ``d = ||p_i - s_j||_1`` and the unweighted base ``D(1, 1) = d(1, 1)``.
"""

from __future__ import annotations

import math
from array import array
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

INF = math.inf


class Direction(str, Enum):
    I = "I"
    J = "J"
    IJ = "IJ"


@dataclass(frozen=True)
class OLTWConfig:
    search_window_c: int = 500
    max_run_count: int = 3
    w_a: float = 0.5
    w_b: float = 1.0
    w_c: float = 1.0

    def __post_init__(self):
        if self.search_window_c < 1:
            raise ValueError("search_window_c must be >= 1")
        if self.max_run_count < 1:
            raise ValueError("max_run_count must be >= 1")

    @classmethod
    def offline(cls, **kwargs) -> OLTWConfig:
        kwargs.setdefault("w_a", 1.0)
        return cls(**kwargs)

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.w_a, self.w_b, self.w_c)


def _as_matrix(seq) -> np.ndarray:
    if hasattr(seq, "energies"):
        seq = [seq]
    rows = [getattr(v, "energies", v) for v in seq]
    if not rows:
        return np.zeros((0, 0))
    return np.atleast_2d(np.asarray(rows, dtype=float))


def l1_distance(a, b) -> float:
    a = np.asarray(getattr(a, "energies", a), dtype=float)
    b = np.asarray(getattr(b, "energies", b), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def _relax(a: np.ndarray, step: np.ndarray, start: float = INF) -> np.ndarray:
    """Solve x[k] = min(a[k], x[k-1] + step[k]) with x[-1] = start, vectorised.

    Shifting by the running sum of ``step`` turns the chain into a running
    minimum.  Exact whenever the partial sums are exact (e.g. integer costs).
    """
    csum = np.cumsum(step)
    seed = np.minimum(a[:1], start + step[:1]) if len(a) else a[:0]
    shifted = np.concatenate([seed - csum[:1], a[1:] - csum[1:]])
    return np.minimum.accumulate(shifted) + csum


def _pairwise_l1(P: np.ndarray, S: np.ndarray) -> np.ndarray:
    return np.abs(P[:, None, :] - S[None, :, :]).sum(axis=2)


def cost_grid(S, P, weights=(1.0, 1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Full cumulative cost grid D (shape |P| x |S|) and local distances d."""
    S = _as_matrix(S)
    P = _as_matrix(P)
    if len(S) == 0 or len(P) == 0:
        raise ValueError("classical DTW needs two nonempty sequences")
    w_a, w_b, w_c = weights
    d = _pairwise_l1(P, S)
    m, n = d.shape
    D = np.empty((m, n))
    D[0, 0] = d[0, 0]
    if n > 1:
        D[0, 1:] = _relax(np.full(n - 1, INF), w_a * d[0, 1:], start=D[0, 0])
    for i in range(1, m):
        prev = D[i - 1]
        vert = w_b * d[i] + prev
        diag = np.full(n, INF)
        diag[1:] = w_c * d[i, 1:] + prev[:-1]
        D[i] = _relax(np.minimum(diag, vert), w_a * d[i])
    return D, d


def classical_dtw(S, P, weights=(1.0, 1.0, 1.0)) -> tuple[float, list[tuple[int, int]]]:
    """Offline DTW: total cost D(|P|, |S|) and the backtraced path of 1-based (i, j) cells.

    Ties while backtracking prefer the diagonal, then the (i-1, j) step,
    then the (i, j-1) step.
    """
    D, d = cost_grid(S, P, weights)
    w_a, w_b, w_c = weights
    m, n = D.shape
    i, j = m - 1, n - 1
    path = [(i + 1, j + 1)]
    while i > 0 or j > 0:
        here = D[i, j]
        tol = 1e-9 * max(1.0, abs(here))
        options = []
        if i > 0 and j > 0:
            options.append((i - 1, j - 1, w_c))
        if i > 0:
            options.append((i - 1, j, w_b))
        if j > 0:
            options.append((i, j - 1, w_a))
        for pi, pj, w in options:
            if abs(D[pi, pj] + w * d[i, j] - here) <= tol:
                i, j = pi, pj
                break
        else:  # pragma: no cover - unreachable for finite costs
            pi, pj, w = min(options, key=lambda o: D[o[0], o[1]] + o[2] * d[i, j])
            i, j = pi, pj
        path.append((i + 1, j + 1))
    path.reverse()
    return float(D[m - 1, n - 1]), path


class CostMatrix:
    """Sparse, growing OLTW cost matrix.

    Cells are kept per column (fixed ``i``) and per row (fixed ``j``); both
    stay contiguous because the frontier only ever grows.  With
    ``keep_history=False`` only the rows/columns still reachable by the
    recursion or the minimum search are retained, so memory is O(c).
    """

    def __init__(self, score_features, keep_history: bool = False):
        self.score = _as_matrix(score_features)
        if len(self.score) == 0:
            raise ValueError("score feature sequence is empty")
        self.perf: dict[int, np.ndarray] = {}
        self.cols: dict[int, tuple[int, array]] = {}
        self.rows: dict[int, tuple[int, array]] = {}
        self.keep_history = keep_history
        self.history: dict[tuple[int, int], float] = {} if keep_history else None
        self.cells_computed = 0

    @property
    def n_score(self) -> int:
        return len(self.score)

    def get(self, i: int, j: int) -> float:
        col = self.cols.get(i)
        if col is not None:
            start, vals = col
            k = j - start
            if 0 <= k < len(vals):
                return vals[k]
        if self.history is not None:
            return self.history.get((i, j), INF)
        return INF

    def _column(self, i: int, lo: int, hi: int) -> np.ndarray:
        col = self.cols.get(i)
        out = np.full(hi - lo + 1, INF)
        if col is None:
            return out
        start, vals = col
        a, b = max(lo, start), min(hi, start + len(vals) - 1)
        if a <= b:
            out[a - lo:b - lo + 1] = np.frombuffer(vals, dtype=float)[a - start:b - start + 1]
        return out

    def _row(self, j: int, lo: int, hi: int) -> np.ndarray:
        row = self.rows.get(j)
        out = np.full(hi - lo + 1, INF)
        if row is None:
            return out
        start, vals = row
        a, b = max(lo, start), min(hi, start + len(vals) - 1)
        if a <= b:
            out[a - lo:b - lo + 1] = np.frombuffer(vals, dtype=float)[a - start:b - start + 1]
        return out

    def _store(self, i: int, j: int, value: float):
        col = self.cols.get(i)
        if col is None:
            self.cols[i] = (j, array("d", [value]))
        else:
            col[1].append(value)
        row = self.rows.get(j)
        if row is None:
            self.rows[j] = (i, array("d", [value]))
        else:
            row[1].append(value)
        if self.history is not None:
            self.history[(i, j)] = value

    def add_perf(self, i: int, feature):
        self.perf[i] = np.asarray(getattr(feature, "energies", feature), dtype=float)

    def compute_base(self) -> float:
        value = float(np.abs(self.perf[1] - self.score[0]).sum())
        self._store(1, 1, value)
        self.cells_computed += 1
        return value

    def compute_column(self, i: int, lo: int, hi: int, config: OLTWConfig):
        """Cells D(i, J) for lo <= J <= hi, column i being new."""
        d = np.abs(self.score[lo - 1:hi] - self.perf[i]).sum(axis=1)
        prev = self._column(i - 1, lo - 1, hi)
        vert = config.w_b * d + prev[1:]
        diag = config.w_c * d + prev[:-1]
        vals = _relax(np.minimum(diag, vert), config.w_a * d, start=self.get(i, lo - 1))
        for k, v in enumerate(vals):
            self._store(i, lo + k, float(v))
        self.cells_computed += len(vals)

    def compute_row(self, j: int, lo: int, hi: int, config: OLTWConfig):
        """Cells D(I, j) for lo <= I <= hi, row j being new."""
        P = np.stack([self.perf[k] for k in range(lo, hi + 1)])
        d = np.abs(P - self.score[j - 1]).sum(axis=1)
        prev = self._row(j - 1, lo - 1, hi)
        horiz = config.w_a * d + prev[1:]
        diag = config.w_c * d + prev[:-1]
        vals = _relax(np.minimum(diag, horiz), config.w_b * d, start=self.get(lo - 1, j))
        for k, v in enumerate(vals):
            self._store(lo + k, j, float(v))
        self.cells_computed += len(vals)

    def frontier_min(self, i: int, j: int) -> tuple[int, int]:
        """Lowest-cost cell on row j or column i; ties go to the most diagonal cell."""
        cs, cvals = self.cols[i]
        rs, rvals = self.rows[j]
        cv = np.frombuffer(cvals, dtype=float)
        rv = np.frombuffer(rvals, dtype=float)
        low = min(cv.min(), rv.min())
        cands = [(i, cs + int(k)) for k in np.flatnonzero(cv == low)]
        cands += [(rs + int(k), j) for k in np.flatnonzero(rv == low)]
        return max(cands, key=lambda ij: (min(ij), ij[1]))

    def prune(self, i: int, j: int, c: int):
        if self.keep_history:
            return
        for k in [k for k in self.cols if k < i - 1]:
            del self.cols[k]
        for k in [k for k in self.rows if k < j - 1]:
            del self.rows[k]
        for k in [k for k in self.perf if k <= i - c]:
            del self.perf[k]


@dataclass
class OLTWState:
    i: int = 1
    j: int = 1
    previous: Optional[Direction] = None
    current: Optional[Direction] = None
    run_count: int = 1
    best: tuple[int, int] = (1, 1)
    finished: bool = False
    directions: list = field(default_factory=list)


def oltw_decide_direction(state: OLTWState, matrix: CostMatrix, config: OLTWConfig) -> Direction:
    if state.i < config.search_window_c:
        direction = Direction.IJ
    elif state.run_count > config.max_run_count and state.previous in (Direction.I, Direction.J):
        direction = Direction.J if state.previous == Direction.I else Direction.I
    else:
        bi, bj = state.best
        if bi < state.i:
            direction = Direction.J
        elif bj < state.j:
            direction = Direction.I
        else:
            direction = Direction.IJ
    if state.j >= matrix.n_score and direction != Direction.I:
        direction = Direction.I  # score exhausted: only the performance can advance
    return direction


def oltw_start(matrix: CostMatrix, first_perf) -> OLTWState:
    matrix.add_perf(1, first_perf)
    matrix.compute_base()
    return OLTWState()


def oltw_advance(state: OLTWState, matrix: CostMatrix, config: OLTWConfig,
                 direction: Direction, next_perf: Callable[[], object]) -> OLTWState:
    """Apply one decided step.  ``next_perf()`` returns the next performance
    feature or None when the performance has ended, which finishes the run."""
    c = config.search_window_c
    if direction in (Direction.I, Direction.IJ):
        feat = next_perf()
        if feat is None:
            state.finished = True
            return state
        state.i += 1
        matrix.add_perf(state.i, feat)
        matrix.compute_column(state.i, max(1, state.j - c + 1), state.j, config)
    if direction in (Direction.J, Direction.IJ):
        state.j += 1
        matrix.compute_row(state.j, max(1, state.i - c + 1), state.i, config)

    state.current = direction
    if direction == state.previous and direction != Direction.IJ:
        state.run_count += 1
    else:
        state.run_count = 1
    state.previous = direction
    state.directions.append(direction)
    state.best = matrix.frontier_min(state.i, state.j)
    matrix.prune(state.i, state.j, c)
    return state


def oltw_run(S, performance: Iterable, config: OLTWConfig | None = None,
             emit: Callable[[int, int], None] | None = None,
             keep_history: bool = False) -> tuple[list[tuple[int, int]], CostMatrix, OLTWState]:
    """Follow a performance feature stream against score features S.

    ``emit(i_best, j_best)`` fires whenever j' changes (including the first
    cell).  Returns the (i', j') history after every step, the matrix and the
    final state.
    """
    config = config or OLTWConfig()
    matrix = CostMatrix(S, keep_history=keep_history)
    source = iter(performance)
    first = next(source, None)
    if first is None:
        return [], matrix, OLTWState(finished=True)
    state = oltw_start(matrix, first)
    history = [state.best]
    if emit:
        emit(*state.best)
    last_j = state.best[1]

    def pull():
        return next(source, None)

    while not state.finished:
        if state.best[1] >= matrix.n_score:
            state.finished = True
            break
        direction = oltw_decide_direction(state, matrix, config)
        oltw_advance(state, matrix, config, direction, pull)
        if state.finished:
            break
        history.append(state.best)
        if state.best[1] != last_j:
            last_j = state.best[1]
            if emit:
                emit(*state.best)
    return history, matrix, state


class OnlineFollower:
    """Push-driven OLTW: feed performance features one at a time.

    ``push`` runs every step that the new feature makes possible (J-only
    steps need no new input) and returns the (i', j') events whose j'
    differs from the previously reported one.
    """

    def __init__(self, S, config: OLTWConfig | None = None, keep_history: bool = False):
        self.config = config or OLTWConfig()
        self.matrix = CostMatrix(S, keep_history=keep_history)
        self.state: OLTWState | None = None
        self._pending: Direction | None = None
        self._last_j = None

    @property
    def finished(self) -> bool:
        return self.state is not None and self.state.finished

    def _report(self, out):
        bj = self.state.best[1]
        if bj != self._last_j:
            self._last_j = bj
            out.append(self.state.best)

    def _step_until_input(self, out, feature):
        st = self.state
        while not st.finished:
            if st.best[1] >= self.matrix.n_score:
                st.finished = True
                break
            if self._pending is None:
                self._pending = oltw_decide_direction(st, self.matrix, self.config)
            direction = self._pending
            if direction in (Direction.I, Direction.IJ):
                if feature is None:
                    return
                supply, feature = feature, None
                self._pending = None
                oltw_advance(st, self.matrix, self.config, direction, lambda s=supply: s)
            else:
                self._pending = None
                oltw_advance(st, self.matrix, self.config, direction, lambda: None)
            self._report(out)

    def push(self, feature) -> list[tuple[int, int]]:
        out: list = []
        if self.finished:
            return out
        if self.state is None:
            self.state = oltw_start(self.matrix, feature)
            self._report(out)
            self._step_until_input(out, None)
            return out
        self._step_until_input(out, feature)
        return out

    def close(self):
        if self.state is None:
            self.state = OLTWState(finished=True)
        self.state.finished = True
