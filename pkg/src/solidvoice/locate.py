"""Impact localization from six-microphone solid-channel recordings.

The reference microphone's short-duration energy envelope picks the impact
onset; the extracted segment is cross-correlated against the other five
channels for TDoAs; the impact point is the least-squares intersection of
the five range-difference hyperbolas, solved with a damped Gauss-Newton
iteration whose residual is guaranteed non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import SampledSignal

__all__ = [
    "MicArrayGeometry",
    "ImpactRecording",
    "ImpactEstimate",
    "LocatorError",
    "NoImpactError",
    "AmbiguousTdoaError",
    "NonConvergenceError",
    "detect_onset",
    "estimate_tdoa",
    "solve_position",
    "attack_distance",
]

NUM_MICS = 6

ONSET_WINDOW_S = 1e-3      # rectangular energy windows
ONSET_HOP_S = 0.25e-3
TDOA_CONFIDENCE_RATIO = 1.2
DEFAULT_RESIDUAL_THRESHOLD_M = 0.05

MAX_ITERATIONS = 100
STEP_TOL_M = 1e-9


class LocatorError(ValueError):
    pass


class NoImpactError(LocatorError):
    """No energy window on the reference channel crossed the threshold."""


class AmbiguousTdoaError(LocatorError):
    """Cross-correlation peak not sufficiently above its runner-up."""


class NonConvergenceError(LocatorError):
    """Solver hit the iteration cap; carries the best iterate found."""

    def __init__(self, best: "ImpactEstimate"):
        self.best = best
        super().__init__(
            f"position solve did not converge within {MAX_ITERATIONS} iterations "
            f"(best residual {best.residual:.3e} m)"
        )


@dataclass(frozen=True)
class MicArrayGeometry:
    """Six 2-D microphone positions (index 0 is the reference) and the
    scalar solid sound speed used for TDoA ranging."""

    positions: np.ndarray  # (6, 2) metres
    solid_speed_m_s: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.shape != (NUM_MICS, 2):
            raise LocatorError(f"expected {NUM_MICS} 2-D positions, got shape {pos.shape}")
        if not (self.solid_speed_m_s > 0):
            raise LocatorError("solid_speed_m_s must be > 0")
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        scale = d.max()
        if scale == 0 or np.any(d[~np.eye(NUM_MICS, dtype=bool)] < 1e-9 * scale):
            raise LocatorError("microphone positions must be pairwise distinct")
        self._check_collinearity(pos, scale)
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "solid_speed_m_s", float(self.solid_speed_m_s))

    @staticmethod
    def _check_collinearity(pos: np.ndarray, scale: float) -> None:
        # any four mics on one line makes the hyperbola intersection degenerate
        for i in range(NUM_MICS):
            for j in range(i + 1, NUM_MICS):
                u = pos[j] - pos[i]
                norm = np.linalg.norm(u)
                u = u / norm
                rel = pos - pos[i]
                perp = np.abs(rel[:, 0] * u[1] - rel[:, 1] * u[0])
                if np.sum(perp < 1e-9 * scale) >= 4:
                    raise LocatorError("four or more microphones are collinear")

    @property
    def aperture_m(self) -> float:
        d = np.linalg.norm(self.positions[:, None, :] - self.positions[None, :, :], axis=-1)
        return float(d.max())


@dataclass(frozen=True)
class ImpactRecording:
    """Six equal-rate, equal-length captures of one impact."""

    channels: tuple[SampledSignal, ...]
    energy_threshold: float
    segment_len_s: float = 0.7e-3

    def __post_init__(self):
        if len(self.channels) != NUM_MICS:
            raise LocatorError(f"expected {NUM_MICS} channels, got {len(self.channels)}")
        rate = self.channels[0].sample_rate_hz
        length = len(self.channels[0])
        for ch in self.channels:
            if ch.sample_rate_hz != rate or len(ch) != length:
                raise LocatorError("all channels must share sample rate and length")
        if not (self.energy_threshold > 0):
            raise LocatorError("energy_threshold must be > 0")
        if not (self.segment_len_s > 0):
            raise LocatorError("segment_len_s must be > 0")
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def sample_rate_hz(self) -> float:
        return self.channels[0].sample_rate_hz


@dataclass(frozen=True)
class ImpactEstimate:
    position: np.ndarray          # (2,) metres
    distance_m: float             # to the attacker anchor
    residual: float               # final least-squares residual norm (m)
    tdoas_s: tuple[float, ...]    # five delays relative to the reference mic
    low_confidence: bool = False
    iterations: int = 0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(2)
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)


def detect_onset(recording: ImpactRecording) -> tuple[float, SampledSignal]:
    """First 1 ms window on the reference channel whose mean-square energy
    crosses the threshold; returns its start time and the impact segment."""
    ch0 = recording.channels[0]
    fs = recording.sample_rate_hz
    win = max(1, int(round(ONSET_WINDOW_S * fs)))
    hop = max(1, int(round(ONSET_HOP_S * fs)))
    x = ch0.samples
    seg_len = max(1, int(round(recording.segment_len_s * fs)))
    for start in range(0, max(1, len(x) - win + 1), hop):
        window = x[start:start + win]
        if window.size and float(np.mean(window**2)) > recording.energy_threshold:
            seg = x[start:start + seg_len]
            return start / fs, SampledSignal(seg.copy(), fs)
    raise NoImpactError(
        f"no {ONSET_WINDOW_S * 1e3:.2f} ms window crossed energy threshold "
        f"{recording.energy_threshold}"
    )


def _best_lag(channel: np.ndarray, segment: np.ndarray, center: int, max_lag: int):
    """Argmax of the sliding correlation of `segment` inside `channel`,
    restricted to start positions within +/- max_lag of `center`.
    Returns (lag, peak, runner_up)."""
    lo = max(0, center - max_lag)
    hi = min(len(channel) - len(segment), center + max_lag)
    if hi < lo:
        raise LocatorError("channel too short for the TDoA search window")
    corr = np.correlate(channel[lo:hi + len(segment)], segment, mode="valid")
    k = int(np.argmax(np.abs(corr)))
    peak = abs(float(corr[k]))
    # runner-up outside the main lobe of the segment autocorrelation
    guard = max(1, len(segment) // 2)
    mask = np.ones(corr.size, dtype=bool)
    mask[max(0, k - guard):k + guard + 1] = False
    runner = float(np.max(np.abs(corr[mask]))) if mask.any() else 0.0
    return lo + k, peak, runner


def _whiten(x: np.ndarray) -> np.ndarray:
    """PHAT-style spectral whitening (unit-magnitude spectrum)."""
    spec = np.fft.rfft(x)
    spec /= np.maximum(np.abs(spec), 1e-12)
    return np.fft.irfft(spec, n=len(x))


def estimate_tdoa(recording: ImpactRecording, segment: SampledSignal,
                  method: str = "direct",
                  max_lag_s: float | None = None) -> tuple[float, ...]:
    """TDoA of each non-reference channel against the impact segment.

    The segment is first located in the reference channel (its own source),
    then in every other channel within +/- max_lag_s of that anchor; each
    tau_i is the lag difference. A peak must exceed its runner-up (outside
    the segment's own main lobe) by TDOA_CONFIDENCE_RATIO or the estimate is
    rejected as ambiguous. method="phat" whitens segment and channels first
    (generalized cross-correlation); the default correlates the raw 0.7 ms
    segment, which is adequate for impulsive impacts.
    """
    if method not in ("direct", "phat"):
        raise LocatorError(f"unknown TDoA method {method!r}")
    fs = recording.sample_rate_hz
    n = len(recording.channels[0])
    max_lag = n if max_lag_s is None else int(np.ceil(max_lag_s * fs)) + 2
    seg = segment.samples
    channels = [ch.samples for ch in recording.channels]
    if method == "phat":
        seg = _whiten(seg)
        channels = [_whiten(x) for x in channels]
    lags = []
    for i, x in enumerate(channels):
        center = lags[0] if lags else (n - len(seg)) // 2
        window = max_lag if lags else n
        k, peak, runner = _best_lag(x, seg, center, window)
        if peak / max(runner, 1e-300) < TDOA_CONFIDENCE_RATIO:
            raise AmbiguousTdoaError(
                f"channel {i}: correlation peak/runner-up ratio "
                f"{peak / max(runner, 1e-300):.3f} < {TDOA_CONFIDENCE_RATIO}"
            )
        lags.append(k)
    return tuple((lag - lags[0]) / fs for lag in lags[1:])


def _residuals(p: np.ndarray, mics: np.ndarray, deltas: np.ndarray):
    d = np.linalg.norm(mics - p, axis=1)
    return (d[1:] - d[0]) - deltas


def _jacobian(p: np.ndarray, mics: np.ndarray) -> np.ndarray:
    diff = p - mics
    dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-15)
    unit = diff / dist[:, None]
    return unit[1:] - unit[0]


def gauss_newton_position(tdoas_s, geometry: MicArrayGeometry, initial_guess=None):
    """Damped Gauss-Newton for the hyperbolic intersection.

    Returns (position, residual_norm_history, iterations). The damping
    (Levenberg-style) only ever accepts steps that reduce the residual, so
    the history is non-increasing.
    """
    mics = geometry.positions
    deltas = np.asarray(tdoas_s, dtype=np.float64) * geometry.solid_speed_m_s
    if deltas.shape != (NUM_MICS - 1,):
        raise LocatorError(f"expected {NUM_MICS - 1} TDoAs, got {deltas.shape}")
    if not np.all(np.isfinite(deltas)):
        raise LocatorError("TDoAs must be finite")
    p = (np.mean(mics, axis=0) if initial_guess is None
         else np.asarray(initial_guess, dtype=np.float64).reshape(2)).copy()
    lam = 1e-3
    r = _residuals(p, mics, deltas)
    history = [float(np.linalg.norm(r))]
    iterations = 0
    converged = False
    for iterations in range(1, MAX_ITERATIONS + 1):
        jac = _jacobian(p, mics)
        g = jac.T @ r
        jtj = jac.T @ jac
        accepted = False
        for _ in range(25):
            try:
                step = np.linalg.solve(jtj + lam * np.eye(2), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = p + step
            r_cand = _residuals(cand, mics, deltas)
            if np.linalg.norm(r_cand) < history[-1]:
                p, r = cand, r_cand
                history.append(float(np.linalg.norm(r)))
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no descent direction left: local minimum
            break
        if np.linalg.norm(step) < STEP_TOL_M:
            converged = True
            break
    return p, history, iterations, converged


def solve_position(tdoas_s, geometry: MicArrayGeometry, initial_guess=None,
                   anchor=None,
                   residual_threshold_m: float = DEFAULT_RESIDUAL_THRESHOLD_M) -> ImpactEstimate:
    """Least-squares impact point from five TDoAs.

    anchor is the configured attacker/transmitter coordinate the reported
    distance refers to; it defaults to the reference microphone.
    """
    p, history, iterations, converged = gauss_newton_position(
        tdoas_s, geometry, initial_guess
    )
    anchor_pt = (geometry.positions[0] if anchor is None
                 else np.asarray(anchor, dtype=np.float64).reshape(2))
    est = ImpactEstimate(
        position=p,
        distance_m=float(np.linalg.norm(p - anchor_pt)),
        residual=history[-1],
        tdoas_s=tuple(float(t) for t in tdoas_s),
        low_confidence=history[-1] > residual_threshold_m,
        iterations=iterations,
    )
    if not converged:
        raise NonConvergenceError(est)
    return est


def attack_distance(recording: ImpactRecording, geometry: MicArrayGeometry,
                    anchor=None, method: str = "direct") -> ImpactEstimate:
    """Full pipeline: onset detection, TDoA estimation, hyperbolic solve."""
    _, segment = detect_onset(recording)
    max_lag_s = geometry.aperture_m / geometry.solid_speed_m_s
    tdoas = estimate_tdoa(recording, segment, method=method, max_lag_s=max_lag_s)
    return solve_position(tdoas, geometry, anchor=anchor)
