"""Waveform primitives: modulation, the microphone nonlinearity model,
FIR low-pass filtering, alignment transforms, noise injection, and the
token error-rate metric.

Everything here is a pure function over `SampledSignal` values: inputs are
never mutated and outputs are freshly allocated, so values can be shared
freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "SampledSignal",
    "NonlinearityParams",
    "Transcript",
    "am_modulate",
    "mic_nonlinearity",
    "lowpass",
    "lowpass_taps",
    "circular_shift",
    "zero_pad",
    "add_noise",
    "decimate",
    "cer",
    "levenshtein",
]

# Simulation-wide rates. 192 kHz keeps every product of squaring a
# 21 kHz +/- 3.4 kHz signal (content up to ~50 kHz) alias-free; the
# recognizer consumes a 16 kHz decimated stream.
SIM_RATE_HZ = 192_000.0
REC_RATE_HZ = 16_000.0
DECIMATION_FACTOR = 12
DECIMATION_CUTOFF_HZ = 7_200.0
FIR_NUM_TAPS = 255


class SignalError(ValueError):
    """Raised when an operation's preconditions on a waveform are violated."""


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """A uniformly sampled real-valued waveform.

    samples: float64 amplitudes, dimensionless, nominally within [-1, 1].
    sample_rate_hz: strictly positive sampling rate.
    """

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise SignalError(f"samples must be 1-D, got shape {arr.shape}")
        if not (self.sample_rate_hz > 0):
            raise SignalError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise SignalError("samples contain NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def rms(self) -> float:
        if self.samples.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))

    def with_samples(self, samples: np.ndarray) -> "SampledSignal":
        return SampledSignal(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class NonlinearityParams:
    """Gains of the microphone front-end response and its built-in low-pass.

    gain_linear / gain_quadratic are the linear and quadratic gains of the
    front-end; the quadratic term is what downconverts ultrasonic content.
    A zero quadratic gain disables downconversion entirely, so it must be
    requested explicitly via allow_zero_quadratic.
    """

    gain_linear: float = 1.0
    gain_quadratic: float = 0.5
    lowpass_cutoff_hz: float = 8_000.0
    allow_zero_quadratic: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.gain_linear) or not np.isfinite(self.gain_quadratic):
            raise SignalError("nonlinearity gains must be finite")
        if self.gain_quadratic == 0.0 and not self.allow_zero_quadratic:
            raise SignalError(
                "gain_quadratic == 0 disables downconversion; pass "
                "allow_zero_quadratic=True if that is deliberate"
            )
        if not (self.lowpass_cutoff_hz > 0):
            raise SignalError("lowpass_cutoff_hz must be > 0")


@dataclass(frozen=True)
class Transcript:
    """A sequence of vocabulary word identifiers."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def am_modulate(
    baseband: SampledSignal, carrier_hz: float, include_pure_carrier: bool = True
) -> SampledSignal:
    """Amplitude-modulate a baseband onto a cosine carrier.

    With the pure carrier included the output is (v[n] + 1) * cos(w n),
    i.e. the voice carrier plus the standalone carrier tone; without it the
    output is plain DSB modulation v[n] * cos(w n).
    """
    fs = baseband.sample_rate_hz
    if not (0 < carrier_hz < fs / 2):
        raise SignalError(
            f"carrier {carrier_hz} Hz must lie strictly below Nyquist ({fs / 2} Hz)"
        )
    v = baseband.samples
    if v.size and np.max(np.abs(v)) > 1.0 + 1e-12:
        raise SignalError("baseband amplitudes must lie within [-1, 1]")
    n = np.arange(v.size)
    carrier = np.cos(2.0 * np.pi * carrier_hz * n / fs)
    if include_pure_carrier:
        out = (v + 1.0) * carrier
    else:
        out = v * carrier
    return baseband.with_samples(out)


def lowpass_taps(cutoff_hz: float, sample_rate_hz: float, num_taps: int = FIR_NUM_TAPS) -> np.ndarray:
    """Hamming-windowed-sinc low-pass FIR taps, normalized to unit DC gain.

    h[m] = (2 fc / fs) * sinc(2 fc (m - M/2) / fs) * hamming(m), then
    divided by sum(h). Odd num_taps gives an integer group delay of
    (num_taps - 1) / 2 samples, compensated by centered application.
    """
    if not (0 < cutoff_hz < sample_rate_hz / 2):
        raise SignalError(
            f"cutoff {cutoff_hz} Hz must lie strictly below Nyquist ({sample_rate_hz / 2} Hz)"
        )
    if num_taps % 2 != 1:
        raise SignalError("num_taps must be odd for integer group delay")
    m = np.arange(num_taps) - (num_taps - 1) / 2.0
    h = (2.0 * cutoff_hz / sample_rate_hz) * np.sinc(2.0 * cutoff_hz * m / sample_rate_hz)
    h *= np.hamming(num_taps)
    return h / np.sum(h)


def fir_apply(samples: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Centered FIR filtering: zero-padded convolution trimmed to input length.

    For odd, symmetric taps this is linear phase with the group delay already
    compensated, and the operator is exactly self-adjoint (used by the
    perturbation trainer's reverse pass).
    """
    if samples.size == 0:
        return samples.copy()
    return fftconvolve(samples, taps, mode="same")


def lowpass(input: SampledSignal, cutoff_hz: float, num_taps: int = FIR_NUM_TAPS) -> SampledSignal:
    """Linear-phase FIR low-pass, time-aligned with the input."""
    taps = lowpass_taps(cutoff_hz, input.sample_rate_hz, num_taps)
    return input.with_samples(fir_apply(input.samples, taps))


def mic_nonlinearity(input: SampledSignal, params: NonlinearityParams) -> SampledSignal:
    """Microphone front-end model: A*s + B*s^2 followed by the built-in low-pass.

    The quadratic term self-mixes any modulated ultrasonic content down to
    baseband; the low-pass then strips the carriers and their harmonics.
    """
    if not (params.lowpass_cutoff_hz < input.sample_rate_hz / 2):
        raise SignalError("nonlinearity low-pass cutoff must lie below Nyquist")
    s = input.samples
    mixed = params.gain_linear * s + params.gain_quadratic * s * s
    taps = lowpass_taps(params.lowpass_cutoff_hz, input.sample_rate_hz)
    return input.with_samples(fir_apply(mixed, taps))


def circular_shift(input: SampledSignal, shift_samples: int) -> SampledSignal:
    """Rotate the waveform: output[n] = input[(n - shift) mod N]."""
    if len(input) == 0:
        return input.with_samples(input.samples.copy())
    return input.with_samples(np.roll(input.samples, int(shift_samples)))


def zero_pad(input: SampledSignal, target_len: int) -> SampledSignal:
    """Append zeros up to target_len samples."""
    n = len(input)
    if target_len < n:
        raise SignalError(f"target_len {target_len} < current length {n}")
    out = np.zeros(int(target_len), dtype=np.float64)
    out[:n] = input.samples
    return input.with_samples(out)


def add_noise(input: SampledSignal, snr_db: float, seed: int) -> SampledSignal:
    """Add white Gaussian noise at the requested SNR relative to the input.

    snr_db = +inf is the no-noise sentinel and returns the signal unchanged.
    Deterministic for a fixed seed.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return input.with_samples(input.samples.copy())
    p_signal = float(np.mean(input.samples**2)) if len(input) else 0.0
    if p_signal == 0.0:
        raise SignalError("SNR is undefined for a zero-RMS input")
    p_noise = p_signal / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, math.sqrt(p_noise), size=len(input))
    return input.with_samples(input.samples + noise)


def decimate(input: SampledSignal, factor: int = DECIMATION_FACTOR,
             cutoff_hz: float = DECIMATION_CUTOFF_HZ) -> SampledSignal:
    """Anti-alias low-pass then keep every factor-th sample."""
    if factor < 1:
        raise SignalError("decimation factor must be >= 1")
    filtered = lowpass(input, cutoff_hz)
    return SampledSignal(filtered.samples[::factor].copy(), input.sample_rate_hz / factor)


def levenshtein(a, b) -> int:
    """Edit distance between two token sequences."""
    a = tuple(a)
    b = tuple(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,          # deletion
                cur[j - 1] + 1,       # insertion
                prev[j - 1] + (ta != tb),  # substitution
            )
        prev = cur
    return prev[-1]


def cer(reference: Transcript, hypothesis: Transcript) -> float:
    """Token error rate: edit distance divided by reference length."""
    if len(reference) == 0:
        raise SignalError("CER is undefined for an empty reference")
    return levenshtein(reference.tokens, hypothesis.tokens) / len(reference)
