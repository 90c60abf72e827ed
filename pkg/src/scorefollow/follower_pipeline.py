"""Score preprocessing and the four-stage following pipeline.

    streamer+slicer -> extractor -> follower -> backend

Stages run in their own threads and talk through bounded queues.  Every
queue ends with a ``_END`` sentinel.  A failing stage stops the others and
its exception is re-raised by ``run``; reaching the end of the score stops
the upstream stages while the backend drains what is already queued.
"""

from __future__ import annotations

import hashlib
import logging
import os
import queue
import shlex
import socket
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio_io import iter_wav_chunks, read_wav
from .cqt_features import (
    CQTParams,
    FeatureExtractor,
    build_filterbank,
    extract_features,
    feature_matrix,
    make_blocker,
)
from .dtw_core import OLTWConfig, OnlineFollower, classical_dtw
from .eval_metrics import FollowerRecord
from .midi_io import ScoreDocument, parse_score_text, read_midi

log = logging.getLogger(__name__)

SYNTH_ENV = "SCOREFOLLOW_SYNTH_CMD"
_END = object()


class ConfigError(ValueError):
    pass


class SynthesisError(RuntimeError):
    pass


class PipelineError(RuntimeError):
    pass


def _is_midi(path) -> bool:
    return Path(path).suffix.lower() in (".mid", ".midi")


@dataclass
class PipelineConfig:
    score_input: str
    performance_input: str
    mode: str = "online"
    cqt_method: str = "nsgt"
    backend: str = "alignment"
    simulate_performance: bool = False
    sleep_compensation: float = 0.0005
    backtrack: bool = False
    backend_compensation: bool = True
    udp_target: Optional[tuple[str, int]] = None
    output: Optional[str] = None
    score_notes: Optional[str] = None  # onsets for a WAV score (MIDI or score text)
    cqt: CQTParams = field(default_factory=CQTParams)
    oltw: OLTWConfig = field(default_factory=OLTWConfig)
    offline_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    synth_cmd: Optional[str] = None
    cache_dir: Optional[str] = None
    queue_size: int = 64
    threaded: bool = True

    def __post_init__(self):
        if self.mode not in ("online", "offline"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.backend not in ("timestamp", "alignment"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.cqt_method not in ("nsgt", "pseudo"):
            raise ConfigError(f"unknown cqt method {self.cqt_method!r}")
        if self.sleep_compensation < 0:
            raise ConfigError("sleep_compensation must be >= 0")
        if self.backend == "timestamp" and self.udp_target is None:
            raise ConfigError("the timestamp backend needs a UDP target")
        if self.queue_size < 1:
            raise ConfigError("queue_size must be >= 1")


@dataclass
class ScoreTimeline:
    """Score time of every score feature frame, plus which notes start in which frame."""

    hop_ms: float
    n_frames: int
    notes: list = field(default_factory=list)  # NoteEvent, time-ordered
    note_frames: list = field(default_factory=list)

    @classmethod
    def build(cls, n_frames: int, hop_ms: float, notes: Optional[ScoreDocument] = None):
        events = list(notes) if notes is not None else []
        frames = [min(n_frames - 1, int(round(e.onset_ms / hop_ms))) for e in events] if n_frames else []
        return cls(hop_ms, n_frames, events, frames)

    def time_ms(self, index: int) -> float:
        """Score time of 0-based frame ``index``."""
        return index * self.hop_ms

    @property
    def times_ms(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.hop_ms


# --------------------------------------------------------------------------
# preprocessing


def synthesize(midi_path, template: Optional[str], cache_dir=None) -> Path:
    """Render a MIDI file to WAV with an external command, caching the result.

    ``template`` contains ``{midi}`` and ``{wav}`` placeholders, e.g.
    ``fluidsynth -ni font.sf2 {midi} -F {wav} -r 44100``.
    """
    template = template or os.environ.get(SYNTH_ENV)
    if not template:
        raise ConfigError(f"MIDI score given but no synthesizer configured (set {SYNTH_ENV})")
    midi_path = Path(midi_path)
    digest = hashlib.sha1(midi_path.read_bytes() + template.encode()).hexdigest()[:16]
    cache = Path(cache_dir) if cache_dir else Path(tempfile.gettempdir()) / "scorefollow-synth"
    cache.mkdir(parents=True, exist_ok=True)
    wav = cache / f"{midi_path.stem}-{digest}.wav"
    if wav.exists():
        return wav
    tmp = wav.with_suffix(".part.wav")
    argv = [tok.replace("{midi}", str(midi_path)).replace("{wav}", str(tmp))
            for tok in shlex.split(template)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, check=False)
    except OSError as exc:
        raise SynthesisError(f"could not run synthesizer {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0 or not tmp.exists():
        raise SynthesisError(
            f"synthesizer failed (exit {proc.returncode}): {' '.join(argv)}\n"
            f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
    tmp.replace(wav)
    return wav


def _load_notes(path) -> ScoreDocument:
    if _is_midi(path):
        return read_midi(path)
    return parse_score_text(Path(path).read_text())


def preprocess_score(config: PipelineConfig) -> tuple[np.ndarray, ScoreTimeline]:
    src = Path(config.score_input)
    if not src.exists():
        raise FileNotFoundError(f"score input not found: {src}")
    notes = None
    if _is_midi(src):
        notes = read_midi(src)
        wav = synthesize(src, config.synth_cmd, config.cache_dir)
    else:
        wav = src
    if config.score_notes:
        notes = _load_notes(config.score_notes)
    samples, _ = read_wav(wav, config.cqt.sample_rate)
    feats = feature_matrix(extract_features(samples, config.cqt, config.cqt_method))
    return feats, ScoreTimeline.build(len(feats), config.cqt.hop_ms, notes)


# --------------------------------------------------------------------------
# streaming


class _Clock:
    """Performance clock shared between the streamer and the backend."""

    def __init__(self, sample_rate: int):
        self.sample_rate = sample_rate
        self.t0 = None
        self.samples = 0

    def start(self):
        self.t0 = time.perf_counter()

    def detection_ms(self, simulate: bool, frame_ms: float) -> float:
        """Wall time since stream start when pacing in real time, otherwise
        the performance time of the frame that produced the event."""
        if simulate and self.t0 is not None:
            return (time.perf_counter() - self.t0) * 1000.0
        return frame_ms


def calibrate_sleep_compensation(hop_s: float = 2048 / 44100, trials: int = 20) -> float:
    """Median oversleep of ``time.sleep`` on this machine, usable as ``sleep_compensation``."""
    over = []
    for _ in range(trials):
        t = time.perf_counter()
        time.sleep(hop_s)
        over.append(time.perf_counter() - t - hop_s)
    over.sort()
    return max(0.0, over[len(over) // 2])


def stream_performance(config: PipelineConfig, clock: Optional[_Clock] = None,
                       cancel: Optional[threading.Event] = None):
    """Yield the performance WAV in hop-sized chunks.

    With ``simulate_performance`` the generator sleeps one hop duration minus
    ``sleep_compensation`` between chunks, the compensation absorbing the
    sleep call's wake-up delay.  Time the consumer spent between two chunks
    is deducted from the sleep, and a negative sleep is clamped to zero.
    """
    path = Path(config.performance_input)
    if not path.exists():
        raise FileNotFoundError(f"performance input not found: {path}")
    hop = config.cqt.hop_len
    interval = hop / config.cqt.sample_rate - config.sleep_compensation
    clock = clock or _Clock(config.cqt.sample_rate)
    clock.start()
    last = clock.t0
    for chunk in iter_wav_chunks(path, hop, config.cqt.sample_rate):
        if cancel is not None and cancel.is_set():
            return
        clock.samples += len(chunk)
        yield chunk
        if config.simulate_performance:
            wait = interval - (time.perf_counter() - last)
            if wait > 0:
                time.sleep(wait)
            last = time.perf_counter()


# --------------------------------------------------------------------------
# backends


class TimestampBackend:
    """One UDP datagram (ASCII seconds) per score-position change."""

    def __init__(self, config: PipelineConfig, timeline: ScoreTimeline, sock=None):
        self.target = config.udp_target
        self.backtrack = config.backtrack
        self.offset_s = config.cqt.slice_len / config.cqt.sample_rate if config.backend_compensation else 0.0
        self.timeline = timeline
        self.sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.last = None
        self.sent: list[float] = []

    def handle(self, i_best: int, j_best: int, det_ms: float):
        t = self.timeline.time_ms(j_best - 1) / 1000.0 + self.offset_s
        if not self.backtrack and self.last is not None and t < self.last:
            return
        self.last = t
        try:
            self.sock.sendto(repr(t).encode("ascii"), self.target)
            self.sent.append(t)
        except OSError as exc:
            log.warning("UDP send to %s failed: %s", self.target, exc)

    def close(self):
        self.sock.close()


class AlignmentBackend:
    """Follower records for score onsets, each reported the first time the
    aligned score frame reaches it."""

    def __init__(self, config: PipelineConfig, timeline: ScoreTimeline, offline: bool = False):
        self.timeline = timeline
        self.hop_ms = timeline.hop_ms
        self.offline = offline
        self.records: list[FollowerRecord] = []
        self._next = 0
        order = sorted(range(len(timeline.notes)), key=lambda k: (timeline.note_frames[k], k))
        self._order = order

    def handle(self, i_best: int, j_best: int, det_ms: float):
        frame = j_best - 1
        est = (i_best - 1) * self.hop_ms
        det = est if self.offline else max(est, det_ms)
        tl = self.timeline
        while self._next < len(self._order) and tl.note_frames[self._order[self._next]] <= frame:
            note = tl.notes[self._order[self._next]]
            self.records.append(FollowerRecord(est, det, note.onset_ms, note.midi_note))
            self._next += 1

    def close(self):
        pass


def make_backend(config: PipelineConfig, timeline: ScoreTimeline, offline: bool = False):
    if config.backend == "timestamp":
        return TimestampBackend(config, timeline)
    if not timeline.notes:
        raise ConfigError("the alignment backend needs score note onsets "
                          "(use a MIDI score or provide score_notes)")
    return AlignmentBackend(config, timeline, offline)


# --------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    records: list = field(default_factory=list)
    sent: list = field(default_factory=list)
    n_perf_frames: int = 0
    finished_score: bool = False
    stream_seconds: float = 0.0


def _put(q: queue.Queue, item, cancel: threading.Event):
    while not cancel.is_set():
        try:
            q.put(item, timeout=0.05)
            return True
        except queue.Full:
            continue
    return False


def _get(q: queue.Queue, cancel: threading.Event):
    while True:
        try:
            return q.get(timeout=0.05)
        except queue.Empty:
            if cancel.is_set():
                return _END


def run_offline(config: PipelineConfig, score_feats=None, timeline=None) -> RunResult:
    if score_feats is None:
        score_feats, timeline = preprocess_score(config)
    samples, _ = read_wav(config.performance_input, config.cqt.sample_rate)
    perf = feature_matrix(extract_features(samples, config.cqt, config.cqt_method))
    backend = make_backend(config, timeline, offline=True)
    _, path = classical_dtw(score_feats, perf, config.offline_weights)
    last_j = None
    for i, j in path:
        if j != last_j:
            backend.handle(i, j, (i - 1) * config.cqt.hop_ms)
            last_j = j
    backend.close()
    return RunResult(records=getattr(backend, "records", []), sent=getattr(backend, "sent", []),
                     n_perf_frames=len(perf), finished_score=True)


def run_online(config: PipelineConfig, score_feats=None, timeline=None, backend=None) -> RunResult:
    if score_feats is None:
        score_feats, timeline = preprocess_score(config)
    if not Path(config.performance_input).exists():
        raise FileNotFoundError(f"performance input not found: {config.performance_input}")
    backend = backend or make_backend(config, timeline)
    params = config.cqt
    bank = build_filterbank(params)
    clock = _Clock(params.sample_rate)
    follower = OnlineFollower(score_feats, config.oltw)
    result = RunResult()

    if not config.threaded:
        return _run_inline(config, bank, clock, follower, backend, result)

    # halt: upstream stages stop (error or score finished); failed: error only,
    # so the backend still drains events produced before a normal stop
    halt = threading.Event()
    failed = threading.Event()
    errors: list[BaseException] = []
    q_blocks: queue.Queue = queue.Queue(config.queue_size)
    q_feats: queue.Queue = queue.Queue(config.queue_size)
    q_events: queue.Queue = queue.Queue(config.queue_size)

    def guarded(fn, out_q, stop):
        def body():
            try:
                fn()
            except BaseException as exc:
                errors.append(exc)
                failed.set()
                halt.set()
            finally:
                if out_q is not None:
                    _put(out_q, _END, stop)
        return body

    def streamer():
        blocker = make_blocker(params, config.cqt_method)
        t_start = time.perf_counter()
        for chunk in stream_performance(config, clock, halt):
            for block in blocker.push(chunk):
                if not _put(q_blocks, block, halt):
                    return
        result.stream_seconds = time.perf_counter() - t_start
        for block in blocker.finish():
            if not _put(q_blocks, block, halt):
                return
        _put(q_blocks, ("total", blocker.total_samples), halt)

    def extractor():
        ext = FeatureExtractor(params, config.cqt_method, bank)
        while True:
            item = _get(q_blocks, halt)
            if item is _END:
                return
            fvs = ext.finish(item[1]) if isinstance(item, tuple) else ext.push(item)
            for fv in fvs:
                if not _put(q_feats, fv, halt):
                    return

    def follow():
        while True:
            fv = _get(q_feats, halt)
            if fv is _END:
                break
            result.n_perf_frames += 1
            for event in follower.push(fv.energies):
                if not _put(q_events, (event, fv.time_ms), failed):
                    return
            if follower.finished:
                result.finished_score = True
                halt.set()
                break
        follower.close()

    def consume():
        while True:
            item = _get(q_events, failed)
            if item is _END:
                return
            (i_best, j_best), frame_ms = item
            backend.handle(i_best, j_best, clock.detection_ms(config.simulate_performance, frame_ms))

    threads = [
        threading.Thread(target=guarded(streamer, q_blocks, halt), name="streamer", daemon=True),
        threading.Thread(target=guarded(extractor, q_feats, halt), name="extractor", daemon=True),
        threading.Thread(target=guarded(follow, q_events, failed), name="follower", daemon=True),
        threading.Thread(target=guarded(consume, None, failed), name="backend", daemon=True),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    backend.close()
    if errors:
        raise PipelineError(f"pipeline stage failed: {errors[0]!r}") from errors[0]
    result.records = getattr(backend, "records", [])
    result.sent = getattr(backend, "sent", [])
    return result


def _run_inline(config, bank, clock, follower, backend, result) -> RunResult:
    """Single-threaded version of the same dataflow, for debugging."""
    params = config.cqt
    blocker = make_blocker(params, config.cqt_method)
    ext = FeatureExtractor(params, config.cqt_method, bank)

    def feed(fvs):
        for fv in fvs:
            result.n_perf_frames += 1
            for i_best, j_best in follower.push(fv.energies):
                backend.handle(i_best, j_best, clock.detection_ms(config.simulate_performance, fv.time_ms))
            if follower.finished:
                result.finished_score = True
                return True
        return False

    stop = threading.Event()
    t_start = time.perf_counter()
    for chunk in stream_performance(config, clock, stop):
        for block in blocker.push(chunk):
            if feed(ext.push(block)):
                stop.set()
                break
    result.stream_seconds = time.perf_counter() - t_start
    if not stop.is_set():
        done = False
        for block in blocker.finish():
            if feed(ext.push(block)):
                done = True
                break
        if not done:
            feed(ext.finish(blocker.total_samples))
    follower.close()
    backend.close()
    result.records = getattr(backend, "records", [])
    result.sent = getattr(backend, "sent", [])
    return result


def run(config: PipelineConfig) -> RunResult:
    """Preprocess the score, follow the performance and write/send the output."""
    if not Path(config.performance_input).exists():
        raise FileNotFoundError(f"performance input not found: {config.performance_input}")
    feats, timeline = preprocess_score(config)
    if config.mode == "offline":
        result = run_offline(config, feats, timeline)
    else:
        result = run_online(config, feats, timeline)
    if config.backend == "alignment" and config.output:
        from .eval_metrics import format_follower_text
        Path(config.output).write_text(format_follower_text(result.records))
    return result
