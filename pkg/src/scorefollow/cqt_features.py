"""Constant-Q feature extraction for streamed audio.

Two routes produce the same kind of output, one K+1 bin, l1-normalised
energy vector per hop:

* ``nsgt``: the signal is cut into half-overlapping Tukey-windowed slices
  of length 2N (sliCQ slicing); every slice goes through nonstationary
  Gabor analysis and the per-bin coefficient magnitudes of both slice
  layers are averaged onto the hop grid.
* ``pseudo``: Hann-windowed FFT frames centred on each hop, binned into
  constant-Q bands with triangular weights.

Both are incremental: ``Slicer``/``Framer`` turn an arbitrary chunked sample
stream into analysis blocks and ``FeatureExtractor`` turns blocks into
feature vectors as soon as a hop can no longer change.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import windows


class InvalidParamsError(ValueError):
    pass


class DimensionError(ValueError):
    pass


METHODS = ("nsgt", "pseudo")


@dataclass(frozen=True)
class CQTParams:
    sample_rate: int = 44100
    bins_per_octave: int = 12
    f_min: float = 130.8
    f_max: float = 4186.0
    slice_len: int = 8192
    transition_len: int = 2048
    hop_len: int = 2048

    def __post_init__(self):
        if self.sample_rate <= 0 or self.bins_per_octave <= 0:
            raise InvalidParamsError("sample_rate and bins_per_octave must be positive")
        if not (0 < self.f_min < self.f_max):
            raise InvalidParamsError(f"need 0 < f_min < f_max, got {self.f_min}, {self.f_max}")
        if self.f_max > self.sample_rate / 2:
            raise InvalidParamsError("f_max exceeds the Nyquist frequency")
        if self.slice_len <= 0 or self.slice_len % 2:
            raise InvalidParamsError("slice_len must be a positive even number")
        if not (0 < self.transition_len < self.slice_len // 2):
            raise InvalidParamsError("transition_len must satisfy 0 < M < slice_len/2")
        if not (0 < self.hop_len <= self.slice_len):
            raise InvalidParamsError("hop_len must satisfy 0 < hop_len <= slice_len")

    @property
    def hop_ms(self) -> float:
        return self.hop_len / self.sample_rate * 1000.0

    @property
    def slice_ms(self) -> float:
        return self.slice_len / self.sample_rate * 1000.0


@dataclass
class FilterBank:
    center_freqs: np.ndarray
    bandwidths: np.ndarray
    q_factor: float
    length: int
    sample_rate: int
    supports: list = field(repr=False)      # FFT bin indices per band
    filters: list = field(repr=False)       # g_k sampled on its support
    n_coefs: np.ndarray = field(repr=False)  # L / a_k
    triangles: np.ndarray = field(repr=False)  # pseudo-CQT weights, (K+1, L//2+1)

    @property
    def n_bins(self) -> int:
        return len(self.center_freqs)

    @property
    def hops(self) -> np.ndarray:
        """Per-band time shift a_k in samples."""
        return self.length / self.n_coefs


@dataclass
class FeatureVector:
    energies: np.ndarray
    hop_index: int
    time_ms: float


def q_factor(bins_per_octave: int) -> float:
    return 1.0 / (2 ** (1 / bins_per_octave) - 2 ** (-1 / bins_per_octave))


def center_frequencies(f_min: float, f_max: float, bins_per_octave: int) -> np.ndarray:
    top = int(math.floor(bins_per_octave * math.log2(f_max / f_min) + 1e-9))
    while f_min * 2 ** (top / bins_per_octave) > f_max:
        top -= 1
    while f_min * 2 ** ((top + 1) / bins_per_octave) <= f_max:
        top += 1
    return f_min * 2.0 ** (np.arange(top + 1) / bins_per_octave)


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def build_filterbank(params: CQTParams, length: int | None = None) -> FilterBank:
    """Constant-Q band layout plus per-band frequency windows for an analysis length."""
    L = params.slice_len if length is None else int(length)
    sr = params.sample_rate
    B = params.bins_per_octave
    fk = center_frequencies(params.f_min, params.f_max, B)
    omega = fk * (2 ** (1 / B) - 2 ** (-1 / B))

    df = sr / L
    nyq_bin = L // 2
    supports, filters, n_coefs = [], [], []
    for f, w in zip(fk, omega):
        lo = max(0, int(math.ceil((f - w / 2) / df)))
        hi = min(nyq_bin, int(math.floor((f + w / 2) / df)))
        bins = np.arange(lo, hi + 1)
        u = (bins * df - f) / w
        g = np.where(np.abs(u) < 0.5, 0.5 + 0.5 * np.cos(2 * np.pi * u), 0.0)
        keep = g > 0
        bins, g = bins[keep], g[keep]
        if len(bins) == 0:
            bins = np.array([min(nyq_bin, int(round(f / df)))])
            g = np.ones(1)
        n = _next_pow2(max(int(math.ceil(L * w / sr)), len(bins)))
        n = min(n, L)
        if L % n:
            raise DimensionError(f"analysis length {L} is not divisible by {n} coefficients")
        supports.append(bins)
        filters.append(g)
        n_coefs.append(n)

    freqs = np.arange(nyq_bin + 1) * df
    u = (freqs[None, :] - fk[:, None]) / omega[:, None]
    tri = np.clip(1.0 - 2.0 * np.abs(u), 0.0, None)

    return FilterBank(
        center_freqs=fk,
        bandwidths=omega,
        q_factor=q_factor(B),
        length=L,
        sample_rate=sr,
        supports=supports,
        filters=filters,
        n_coefs=np.asarray(n_coefs),
        triangles=tri,
    )


def _band_groups(bank: FilterBank):
    # bands sharing a coefficient count are transformed in one batched IFFT
    cache = getattr(bank, "_groups", None)
    if cache is None:
        cache = {}
        for k, n in enumerate(bank.n_coefs):
            cache.setdefault(int(n), []).append(k)
        bank._groups = cache
    return cache


def nsgt_analyze(x: np.ndarray, bank: FilterBank) -> list[np.ndarray]:
    """Nonstationary Gabor analysis of one length-L block.

    Returns one complex array of ``L / a_k`` coefficients per band:
    ``c_k = sqrt(L/a_k) * IFFT_{L/a_k}(FFT_L(x) * conj(g_k))``, with the
    band's support periodised into the shorter IFFT length.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != bank.length:
        raise DimensionError(f"expected a 1-D block of length {bank.length}, got shape {x.shape}")
    y = np.fft.rfft(x)
    out: list = [None] * bank.n_bins
    for n, ks in _band_groups(bank).items():
        buf = np.zeros((len(ks), n), dtype=complex)
        for row, k in enumerate(ks):
            sup = bank.supports[k]
            buf[row, sup % n] = y[sup] * np.conj(bank.filters[k])
        coefs = math.sqrt(n) * np.fft.ifft(buf, axis=1)
        for row, k in enumerate(ks):
            out[k] = coefs[row]
    return out


def pseudo_cqt(frame: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Triangle-binned Hann/FFT magnitudes for one frame (unnormalised)."""
    frame = np.asarray(frame, dtype=float)
    if len(frame) != bank.length:
        raise DimensionError(f"expected a frame of length {bank.length}, got {len(frame)}")
    win = _hann(bank.length)
    mag = np.abs(np.fft.rfft(frame * win))
    return bank.triangles @ mag


def normalize_energy(magnitudes: np.ndarray) -> np.ndarray:
    """l1-normalise; an all-zero input stays all-zero."""
    m = np.abs(np.asarray(magnitudes, dtype=float))
    total = m.sum()
    if total <= 0:
        return np.zeros_like(m)
    return m / total


_HANN_CACHE: dict = {}


def _hann(n: int) -> np.ndarray:
    w = _HANN_CACHE.get(n)
    if w is None:
        w = _HANN_CACHE[n] = windows.hann(n, sym=False)
    return w


def slice_window(slice_len: int, transition_len: int) -> np.ndarray:
    """Tukey slicing window: zero pad, sin^2 rise of M, flat, cos^2 fall of M, zero pad.

    Translates by N = slice_len/2 sum to one everywhere (half-overlap).
    """
    N = slice_len // 2
    M = transition_len
    pad = (N - M) // 2
    ramp = np.sin(0.5 * np.pi * (np.arange(M) + 0.5) / M) ** 2
    w = np.zeros(slice_len)
    w[pad:pad + M] = ramp
    w[pad + M:pad + N] = 1.0
    w[pad + N:pad + N + M] = ramp[::-1]
    return w


@dataclass
class Block:
    """One analysis block handed from the slicer to the extractor."""

    index: int
    start: int  # global sample position of data[0]; may be negative
    data: np.ndarray


class _Stream:
    """Sample buffer over global sample positions; negative positions are zero."""

    def __init__(self, first: int):
        self.buf = np.zeros(max(0, -first))
        self.buf_start = first
        self.total = 0

    def push(self, chunk):
        chunk = np.asarray(chunk, dtype=float).ravel()
        self.total += len(chunk)
        if len(chunk):
            self.buf = np.concatenate([self.buf, chunk])

    def available_until(self) -> int:
        return self.buf_start + len(self.buf)

    def take(self, start: int, length: int) -> np.ndarray:
        off = start - self.buf_start
        seg = self.buf[off:off + length]
        if len(seg) < length:
            seg = np.concatenate([seg, np.zeros(length - len(seg))])
        return seg

    def drop_before(self, pos: int):
        off = pos - self.buf_start
        if off > 0:
            self.buf = self.buf[off:]
            self.buf_start = pos


class Slicer:
    """Cut a chunked sample stream into half-overlapping Tukey-windowed slices.

    Slice m spans global samples ``[m*N - P, m*N - P + 2N)`` with P chosen so
    that slice 0's flat part starts at sample 0.  At end of stream just
    enough zero-padded slices are emitted to cover every sample with weight 1.
    """

    def __init__(self, params: CQTParams):
        self.params = params
        self.N = params.slice_len // 2
        M = params.transition_len
        self.offset = (self.N - M) // 2 + M
        self.window = slice_window(params.slice_len, M)
        self._stream = _Stream(-self.offset)
        self._next = 0

    def _start(self, m: int) -> int:
        return m * self.N - self.offset

    def _emit(self, m: int) -> Block:
        start = self._start(m)
        data = self._stream.take(start, self.params.slice_len) * self.window
        self._stream.drop_before(self._start(m + 1))
        return Block(m, start, data)

    def push(self, chunk) -> list[Block]:
        self._stream.push(chunk)
        out = []
        while self._start(self._next) + self.params.slice_len <= self._stream.available_until():
            out.append(self._emit(self._next))
            self._next += 1
        return out

    def finish(self) -> list[Block]:
        T = self._stream.total
        flat = self.N - self.params.transition_len
        last = max(0, math.ceil((T - flat) / self.N))
        out = []
        while self._next <= last:
            out.append(self._emit(self._next))
            self._next += 1
        return out

    @property
    def total_samples(self) -> int:
        return self._stream.total


class Framer:
    """Hann-analysis frames of ``slice_len`` centred on every hop (pseudo-CQT route)."""

    def __init__(self, params: CQTParams):
        self.params = params
        self.half = params.slice_len // 2
        self._stream = _Stream(-self.half)
        self._next = 0

    def _start(self, h: int) -> int:
        return h * self.params.hop_len - self.half

    def _emit(self, h: int) -> Block:
        start = self._start(h)
        data = self._stream.take(start, self.params.slice_len)
        self._stream.drop_before(self._start(h + 1))
        return Block(h, start, data)

    def push(self, chunk) -> list[Block]:
        self._stream.push(chunk)
        out = []
        while self._start(self._next) + self.params.slice_len <= self._stream.available_until():
            # frames past the end of a finished stream are decided in finish()
            out.append(self._emit(self._next))
            self._next += 1
        return out

    def finish(self) -> list[Block]:
        H = math.ceil(self._stream.total / self.params.hop_len)
        out = []
        while self._next < H:
            out.append(self._emit(self._next))
            self._next += 1
        return out

    @property
    def total_samples(self) -> int:
        return self._stream.total


def make_blocker(params: CQTParams, method: str):
    if method == "nsgt":
        return Slicer(params)
    if method == "pseudo":
        return Framer(params)
    raise InvalidParamsError(f"unknown cqt method {method!r}")


def slice_signal(samples: Iterable, params: CQTParams) -> list[np.ndarray]:
    """Windowed sliCQ slices for a sample stream given as an iterable of chunks or a flat array."""
    slicer = Slicer(params)
    blocks = []
    for chunk in _as_chunks(samples):
        blocks += slicer.push(chunk)
    blocks += slicer.finish()
    return [b.data for b in blocks]


def _as_chunks(samples) -> Iterator[np.ndarray]:
    if isinstance(samples, np.ndarray):
        yield samples
        return
    for chunk in samples:
        yield np.atleast_1d(np.asarray(chunk, dtype=float))


class FeatureExtractor:
    """Turn analysis blocks into per-hop feature vectors, incrementally.

    For ``nsgt`` every band coefficient is assigned to the hop nearest its
    time position and magnitudes are averaged per hop over both slice layers.
    A hop is released once no later slice can contribute to it.
    """

    def __init__(self, params: CQTParams, method: str = "nsgt", bank: FilterBank | None = None):
        if method not in METHODS:
            raise InvalidParamsError(f"unknown cqt method {method!r}")
        self.params = params
        self.method = method
        self.bank = bank if bank is not None else build_filterbank(params)
        self._sums: dict[int, np.ndarray] = {}
        self._counts: dict[int, np.ndarray] = {}
        self._emitted = 0
        self._last = np.zeros(self.bank.n_bins)
        if method == "nsgt":
            self._step = params.slice_len // 2
            self._times = [np.arange(n) * (self.bank.length / n) for n in self.bank.n_coefs]

    def _vector(self, h: int, energies: np.ndarray) -> FeatureVector:
        return FeatureVector(energies, h, h * self.params.hop_ms)

    def push(self, block: Block) -> list[FeatureVector]:
        if self.method == "pseudo":
            h = block.index
            self._emitted = h + 1
            return [self._vector(h, normalize_energy(pseudo_cqt(block.data, self.bank)))]

        hop = self.params.hop_len
        coefs = nsgt_analyze(block.data, self.bank)
        for k, c in enumerate(coefs):
            t = block.start + self._times[k]
            hidx = np.floor(t / hop + 0.5).astype(int)
            mags = np.abs(c)
            for h in np.unique(hidx):
                if h < self._emitted:
                    continue
                sel = hidx == h
                if h not in self._sums:
                    self._sums[h] = np.zeros(self.bank.n_bins)
                    self._counts[h] = np.zeros(self.bank.n_bins)
                self._sums[h][k] += mags[sel].sum()
                self._counts[h][k] += sel.sum()
        next_start = block.start + self._step
        ready = math.floor(next_start / hop - 0.5)  # hops <= ready are complete
        return self._release(ready)

    def _release(self, upto: int, limit: int | None = None) -> list[FeatureVector]:
        out = []
        h = self._emitted
        while h <= upto and (limit is None or h < limit):
            s = self._sums.pop(h, None)
            cnt = self._counts.pop(h, None)
            if s is None:
                mags = self._last.copy()
            else:
                mags = np.where(cnt > 0, s / np.maximum(cnt, 1), self._last)
            self._last = mags
            out.append(self._vector(h, normalize_energy(mags)))
            h += 1
        self._emitted = h
        return out

    def finish(self, total_samples: int) -> list[FeatureVector]:
        H = math.ceil(total_samples / self.params.hop_len)
        if self.method == "pseudo":
            return []
        out = self._release(H - 1, limit=H)
        self._sums.clear()
        self._counts.clear()
        return out


def extract_features(samples, params: CQTParams | None = None, method: str = "nsgt",
                     bank: FilterBank | None = None) -> list[FeatureVector]:
    """Whole-signal convenience wrapper around the streaming blocker and extractor.

    ``samples`` is a flat array or an iterable of chunks; either gives identical
    output.
    """
    params = params or CQTParams()
    blocker = make_blocker(params, method)
    ext = FeatureExtractor(params, method, bank)
    out: list[FeatureVector] = []
    for chunk in _as_chunks(samples):
        for block in blocker.push(chunk):
            out += ext.push(block)
    for block in blocker.finish():
        out += ext.push(block)
    out += ext.finish(blocker.total_samples)
    H = math.ceil(blocker.total_samples / params.hop_len)
    return out[:H]


def feature_matrix(features: Sequence[FeatureVector]) -> np.ndarray:
    if not features:
        return np.zeros((0, 0))
    return np.stack([f.energies for f in features])
