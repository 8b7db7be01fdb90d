"""Solid-channel model: plate phase velocity, per-frequency delay profiles,
dispersive propagation, and inverse compensation.

The thin-plate approximation gives a phase velocity growing with the square
root of frequency:

    v(f) = (E h f^2 / (12 rho (1 - nu^2)))^(1/4)

Propagation applies the phase factor exp(-j 2 pi f tau(f)) per DFT bin with
tau(f) = L / v(f), plus an optional linear-in-frequency attenuation. The
transform runs on the signal's own frequency grid (circularly), which makes
zero-attenuation propagation exactly unitary and `compensate` its exact
inverse bin-for-bin. Callers are responsible for leaving enough trailing
silence for the delayed content (see `required_padding_samples`); the
operations raise when the delay spread of the occupied band exceeds the
signal duration.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import SampledSignal, SignalError

__all__ = [
    "PlateMaterial",
    "ChannelConfig",
    "MaterialPreset",
    "DelaySpreadError",
    "phase_velocity",
    "delay_profile",
    "propagate",
    "compensate",
    "invert_channel",
    "required_padding_samples",
    "load_material_presets",
    "default_presets_path",
]

MATERIALS_ENV_VAR = "SOLIDVOICE_MATERIALS"

# Bins whose magnitude falls below this fraction of the spectral peak are
# treated as unoccupied when estimating the delay spread of a signal.
OCCUPANCY_THRESHOLD = 1e-3


class DispersionError(ValueError):
    """Configuration or domain error in the channel model."""


class DelaySpreadError(DispersionError):
    """Signal too short for the channel's delay spread; carries the fix."""

    def __init__(self, spread_samples: int, length: int):
        self.required_pad_samples = spread_samples - length + 1
        super().__init__(
            f"channel delay spread ({spread_samples} samples) reaches the signal "
            f"length ({length}); zero-pad the input by at least "
            f"{self.required_pad_samples} samples before propagating"
        )


@dataclass(frozen=True)
class PlateMaterial:
    """Physical parameters of the plate the sound travels through."""

    name: str
    youngs_modulus_pa: float
    density_kg_m3: float
    thickness_m: float
    poisson_ratio: float

    def __post_init__(self):
        for fname in ("youngs_modulus_pa", "density_kg_m3", "thickness_m"):
            if not (getattr(self, fname) > 0):
                raise DispersionError(f"{fname} must be > 0, got {getattr(self, fname)}")
        if not (0.0 < self.poisson_ratio < 0.5):
            raise DispersionError(
                f"poisson_ratio must lie strictly inside (0, 0.5), got {self.poisson_ratio}"
            )


@dataclass(frozen=True)
class ChannelConfig:
    """One propagation scenario: a material, a distance, and loss/floor knobs.

    attenuation_db_per_m_per_khz: alpha(f) = attenuation * f/1000 dB per metre,
    the standard first-order loss law (0 disables loss).
    min_freq_hz: delays below this frequency are clamped to the floor value;
    the thin-plate velocity vanishes at DC so unclamped delays diverge.
    """

    material: PlateMaterial
    distance_m: float
    attenuation_db_per_m_per_khz: float = 0.0
    min_freq_hz: float = 50.0

    def __post_init__(self):
        if not (self.distance_m > 0):
            raise DispersionError(f"distance_m must be > 0, got {self.distance_m}")
        if self.attenuation_db_per_m_per_khz < 0:
            raise DispersionError("attenuation must be >= 0")
        if not (self.min_freq_hz > 0):
            raise DispersionError("min_freq_hz must be > 0")


@dataclass(frozen=True)
class MaterialPreset:
    """A named material plus the per-material scalars other modules consume."""

    material: PlateMaterial
    attenuation_db_per_m_per_khz: float
    solid_speed_m_s: float

    def channel(self, distance_m: float, min_freq_hz: float = 50.0) -> ChannelConfig:
        return ChannelConfig(
            material=self.material,
            distance_m=distance_m,
            attenuation_db_per_m_per_khz=self.attenuation_db_per_m_per_khz,
            min_freq_hz=min_freq_hz,
        )


def phase_velocity(material: PlateMaterial, freq_hz):
    """Thin-plate phase velocity in m/s; accepts a scalar or an array."""
    f = np.asarray(freq_hz, dtype=np.float64)
    if np.any(f <= 0):
        raise DispersionError("phase velocity requires freq_hz > 0")
    num = material.youngs_modulus_pa * material.thickness_m * f * f
    den = 12.0 * material.density_kg_m3 * (1.0 - material.poisson_ratio**2)
    v = (num / den) ** 0.25
    return float(v) if np.isscalar(freq_hz) else v


def delay_profile(config: ChannelConfig, freqs_hz) -> np.ndarray:
    """Per-frequency propagation delay tau(f) = L / v(f), in seconds.

    Frequencies below the dispersion floor (including the DC bin) get the
    delay at the floor frequency, keeping the profile finite.
    """
    f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    clamped = np.maximum(f, config.min_freq_hz)
    tau = config.distance_m / phase_velocity(config.material, clamped)
    return tau


def _attenuation_db(config: ChannelConfig, freqs_hz: np.ndarray) -> np.ndarray:
    return config.attenuation_db_per_m_per_khz * (freqs_hz / 1000.0) * config.distance_m


def _occupied_band(spectrum_mag: np.ndarray) -> np.ndarray:
    peak = spectrum_mag.max() if spectrum_mag.size else 0.0
    if peak == 0.0:
        return np.zeros_like(spectrum_mag, dtype=bool)
    return spectrum_mag >= OCCUPANCY_THRESHOLD * peak


def worst_case_padding_samples(config: ChannelConfig, sample_rate_hz: float) -> int:
    """Upper bound on any delay spread: the delay at the dispersion floor."""
    tau_floor = float(delay_profile(config, [config.min_freq_hz])[0])
    return int(np.ceil(tau_floor * sample_rate_hz))


def required_padding_samples(input: SampledSignal, config: ChannelConfig) -> int:
    """Delay spread of the input's occupied band, in samples (rounded up)."""
    n = len(input)
    if n < 2:
        return 0
    freqs = np.fft.rfftfreq(n, d=1.0 / input.sample_rate_hz)
    occupied = _occupied_band(np.abs(np.fft.rfft(input.samples)))
    if not occupied.any():
        return 0
    tau = delay_profile(config, freqs)[occupied]
    return int(np.ceil((tau.max() - tau.min()) * input.sample_rate_hz))


def _check_spread(input: SampledSignal, config: ChannelConfig) -> None:
    spread = required_padding_samples(input, config)
    if spread >= len(input):
        raise DelaySpreadError(spread, len(input))


def _channel_response(n: int, fs: float, config: ChannelConfig,
                      inverse: bool) -> np.ndarray:
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    tau = delay_profile(config, freqs)
    phase = 2.0 * np.pi * freqs * tau
    h = np.exp((1j if inverse else -1j) * phase).astype(np.complex128)
    # The Nyquist bin of a real FFT must stay real for the filter to remain
    # exactly unitary and invertible; band-limited inputs carry no content
    # there, so pin it to unity.
    if n % 2 == 0:
        h[-1] = 1.0
    return h


def propagate(input: SampledSignal, config: ChannelConfig) -> SampledSignal:
    """Send a waveform through the dispersive (optionally lossy) channel."""
    n = len(input)
    if n < 2:
        raise DispersionError("propagate requires an input of length >= 2")
    _check_spread(input, config)
    spec = np.fft.rfft(input.samples)
    h = _channel_response(n, input.sample_rate_hz, config, inverse=False)
    if config.attenuation_db_per_m_per_khz > 0.0:
        freqs = np.fft.rfftfreq(n, d=1.0 / input.sample_rate_hz)
        h = h * 10.0 ** (-_attenuation_db(config, freqs) / 20.0)
    out = np.fft.irfft(spec * h, n=n)
    return input.with_samples(out)


def compensate(input: SampledSignal, config: ChannelConfig) -> SampledSignal:
    """Pre-apply the inverse phase delays so propagation restores the input.

    Phase-only: attenuation, if configured, is not undone here (see
    `invert_channel` for the transmit-side full inversion).
    """
    n = len(input)
    if n < 2:
        raise DispersionError("compensate requires an input of length >= 2")
    _check_spread(input, config)
    spec = np.fft.rfft(input.samples)
    h = _channel_response(n, input.sample_rate_hz, config, inverse=True)
    out = np.fft.irfft(spec * h, n=n)
    return input.with_samples(out)


def invert_channel(input: SampledSignal, config: ChannelConfig,
                   emphasis_limit_hz: float | None = None) -> SampledSignal:
    """Full transmit-side channel inversion: inverse phase plus pre-emphasis
    against the attenuation law, so propagate(invert_channel(x)) == x.

    The amplitude boost is held flat above emphasis_limit_hz (default: the
    highest occupied frequency) so empty high bins are not amplified.
    """
    n = len(input)
    if n < 2:
        raise DispersionError("invert_channel requires an input of length >= 2")
    _check_spread(input, config)
    spec = np.fft.rfft(input.samples)
    freqs = np.fft.rfftfreq(n, d=1.0 / input.sample_rate_hz)
    h = _channel_response(n, input.sample_rate_hz, config, inverse=True)
    if config.attenuation_db_per_m_per_khz > 0.0:
        if emphasis_limit_hz is None:
            occupied = _occupied_band(np.abs(spec))
            emphasis_limit_hz = float(freqs[occupied][-1]) if occupied.any() else 0.0
        boost_db = _attenuation_db(config, np.minimum(freqs, emphasis_limit_hz))
        h = h * 10.0 ** (boost_db / 20.0)
    out = np.fft.irfft(spec * h, n=n)
    return input.with_samples(out)


def default_presets_path() -> Path:
    env = os.environ.get(MATERIALS_ENV_VAR)
    if env:
        p = Path(env)
        return p / "materials.ini" if p.is_dir() else p
    return Path(__file__).parent / "data" / "materials.ini"


def load_material_presets(path=None) -> dict[str, MaterialPreset]:
    """Read the material preset file (INI, one section per material)."""
    path = Path(path) if path is not None else default_presets_path()
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise DispersionError(f"material preset file not found: {path}")
    presets: dict[str, MaterialPreset] = {}
    for name in parser.sections():
        sec = parser[name]
        material = PlateMaterial(
            name=name,
            youngs_modulus_pa=float(sec["youngs_modulus_pa"]),
            density_kg_m3=float(sec["density_kg_m3"]),
            thickness_m=float(sec["thickness_m"]),
            poisson_ratio=float(sec["poisson_ratio"]),
        )
        presets[name] = MaterialPreset(
            material=material,
            attenuation_db_per_m_per_khz=float(sec["attenuation_db_per_m_per_khz"]),
            solid_speed_m_s=float(sec["solid_speed_m_s"]),
        )
    return presets
