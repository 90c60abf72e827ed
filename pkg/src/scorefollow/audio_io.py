"""WAV reading (whole-file or chunked) and writing, mono float64 in [-1, 1]."""

from __future__ import annotations

import wave
from collections.abc import Iterator

import numpy as np
from scipy.io import wavfile


class SampleRateError(ValueError):
    pass


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        x = data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x


def read_wav(path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    rate, data = wavfile.read(str(path))
    if expected_rate is not None and rate != expected_rate:
        raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    return _to_float(data), rate


def write_wav(path, samples: np.ndarray, rate: int):
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(str(path), rate, np.round(x * 32767).astype(np.int16))


def wav_info(path) -> tuple[int, int]:
    """(sample rate, frame count) without reading the samples."""
    try:
        with wave.open(str(path), "rb") as w:
            return w.getframerate(), w.getnframes()
    except wave.Error:
        rate, data = wavfile.read(str(path), mmap=True)
        return rate, len(data)


def iter_wav_chunks(path, chunk: int, expected_rate: int | None = None) -> Iterator[np.ndarray]:
    """Yield mono float chunks of ``chunk`` frames (the last one may be shorter).

    Integer PCM is streamed from disk; other encodings fall back to a
    memory-mapped read.
    """
    try:
        w = wave.open(str(path), "rb")
    except wave.Error:
        rate, data = wavfile.read(str(path), mmap=True)
        if expected_rate is not None and rate != expected_rate:
            raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
        for k in range(0, len(data), chunk):
            yield _to_float(np.array(data[k:k + chunk]))
        return
    with w:
        rate = w.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
        width, nch = w.getsampwidth(), w.getnchannels()
        while True:
            raw = w.readframes(chunk)
            if not raw:
                return
            if width == 3:
                b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
                ints = (b[:, 0].astype(np.int32) | (b[:, 1].astype(np.int32) << 8)
                        | (b[:, 2].astype(np.int32) << 16))
                ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
                x = ints.astype(np.float64) / float(1 << 23)
            else:
                dtype = {1: np.uint8, 2: np.int16, 4: np.int32}[width]
                x = _to_float(np.frombuffer(raw, dtype=dtype))
            if nch > 1:
                x = x.reshape(-1, nch).mean(axis=1)
            yield x
