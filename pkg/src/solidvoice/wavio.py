"""Mono 16-bit PCM WAV import/export.

Amplitudes map linearly between int16 and [-1, 1): sample = code / 32768.
Writing clips to [-1, 1) so the round trip is stable to within one
quantization step (1/32768).
"""

from __future__ import annotations

import wave

import numpy as np

from .signals import SampledSignal, SignalError

_SCALE = 32768.0


def write_wav(path, signal: SampledSignal) -> None:
    codes = np.clip(np.rint(signal.samples * _SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(round(signal.sample_rate_hz)))
        w.writeframes(codes.tobytes())


def read_wav(path) -> SampledSignal:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise SignalError(f"{path}: expected mono WAV, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise SignalError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        rate = float(w.getframerate())
        raw = w.readframes(w.getnframes())
    codes = np.frombuffer(raw, dtype="<i2")
    return SampledSignal(codes.astype(np.float64) / _SCALE, rate)
