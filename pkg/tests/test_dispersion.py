import numpy as np
import pytest
from scipy.signal import hilbert

from solidvoice.dispersion import (
    ChannelConfig,
    DelaySpreadError,
    DispersionError,
    PlateMaterial,
    compensate,
    delay_profile,
    invert_channel,
    load_material_presets,
    phase_velocity,
    propagate,
    required_padding_samples,
    worst_case_padding_samples,
)
from solidvoice.signals import SampledSignal

FS = 192_000.0

STEEL = PlateMaterial(
    name="steel",
    youngs_modulus_pa=200e9,
    density_kg_m3=7850.0,
    thickness_m=0.01,
    poisson_ratio=0.3,
)


def oracle_velocity(E, rho, h, nu, f):
    return (E * h * f * f / (12.0 * rho * (1.0 - nu * nu))) ** 0.25


class TestPhaseVelocity:
    def test_hand_evaluated_steel_value(self):
        v = phase_velocity(STEEL, 21_000.0)
        expected = oracle_velocity(200e9, 7850.0, 0.01, 0.3, 21_000.0)
        assert v == pytest.approx(expected, rel=1e-12)
        assert v == pytest.approx(1.79e3, rel=0.01)

    def test_sqrt_frequency_law(self):
        v1 = phase_velocity(STEEL, 5_000.0)
        v2 = phase_velocity(STEEL, 10_000.0)
        assert v2 / v1 == pytest.approx(np.sqrt(2.0), rel=1e-12)

    def test_fourth_root_modulus_law(self):
        scaled = PlateMaterial("x16", 16 * 200e9, 7850.0, 0.01, 0.3)
        assert phase_velocity(scaled, 7_000.0) == pytest.approx(
            2.0 * phase_velocity(STEEL, 7_000.0), rel=1e-12
        )

    def test_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            f = rng.uniform(100, 40_000)
            e, rho, h, nu = rng.uniform(1e9, 300e9), rng.uniform(300, 9000), \
                rng.uniform(0.002, 0.05), rng.uniform(0.05, 0.45)
            m = PlateMaterial("m", e, rho, h, nu)
            assert phase_velocity(m, f * 1.5) > phase_velocity(m, f)
            assert phase_velocity(PlateMaterial("m", e * 2, rho, h, nu), f) > phase_velocity(m, f)
            assert phase_velocity(PlateMaterial("m", e, rho, h * 2, nu), f) > phase_velocity(m, f)
            assert phase_velocity(PlateMaterial("m", e, rho * 2, h, nu), f) < phase_velocity(m, f)

    def test_nonpositive_frequency_rejected(self):
        with pytest.raises(DispersionError):
            phase_velocity(STEEL, 0.0)

    def test_poisson_bounds_enforced(self):
        with pytest.raises(DispersionError):
            PlateMaterial("bad", 1e9, 1000.0, 0.01, 0.5)


class TestDelayProfile:
    def test_linear_in_distance(self):
        c1 = ChannelConfig(STEEL, distance_m=1.0)
        c2 = ChannelConfig(STEEL, distance_m=0.5)
        t1 = delay_profile(c1, [21_000.0])[0]
        t2 = delay_profile(c2, [21_000.0])[0]
        assert t2 == pytest.approx(t1 / 2.0, rel=1e-12)

    def test_quarter_delay_at_quadruple_frequency(self):
        c = ChannelConfig(STEEL, distance_m=1.0)
        t = delay_profile(c, [2_000.0, 8_000.0])
        assert t[1] == pytest.approx(t[0] / 2.0, rel=1e-12)

    def test_steel_half_metre_value(self):
        c = ChannelConfig(STEEL, distance_m=0.5)
        tau = delay_profile(c, [21_000.0])[0]
        expected = 0.5 / oracle_velocity(200e9, 7850.0, 0.01, 0.3, 21_000.0)
        assert tau == pytest.approx(expected, rel=1e-12)
        assert tau == pytest.approx(0.28e-3, rel=0.01)

    def test_floor_clamps_low_frequencies(self):
        c = ChannelConfig(STEEL, distance_m=1.0, min_freq_hz=50.0)
        tau = delay_profile(c, [0.0, 10.0, 50.0, 100.0])
        assert tau[0] == tau[1] == tau[2]
        assert tau[3] < tau[2]


def bandlimited_noise(seed, n, lo_hz, hi_hz, fs=FS):
    rng = np.random.default_rng(seed)
    spec = np.zeros(n // 2 + 1, dtype=complex)
    freqs = np.fft.rfftfreq(n, 1 / fs)
    band = (freqs >= lo_hz) & (freqs <= hi_hz)
    spec[band] = rng.normal(size=band.sum()) + 1j * rng.normal(size=band.sum())
    x = np.fft.irfft(spec, n=n)
    return SampledSignal(0.5 * x / np.max(np.abs(x)), fs)


class TestPropagate:
    def test_vanishing_distance_is_identity(self):
        x = bandlimited_noise(1, 40_000, 500, 4_000)
        cfg = ChannelConfig(STEEL, distance_m=1e-12)
        y = propagate(x, cfg)
        rel = np.linalg.norm(y.samples - x.samples) / np.linalg.norm(x.samples)
        assert rel < 1e-9

    def test_energy_preserved_without_attenuation(self):
        x = bandlimited_noise(2, 65_536, 300, 5_000)
        cfg = ChannelConfig(STEEL, distance_m=1.0)
        y = propagate(x, cfg)
        ein = np.sum(x.samples**2)
        eout = np.sum(y.samples**2)
        assert abs(eout - ein) / ein < 1e-9

    def test_linearity(self):
        xa = bandlimited_noise(3, 30_000, 300, 4_000)
        xb = bandlimited_noise(4, 30_000, 300, 4_000)
        cfg = ChannelConfig(STEEL, distance_m=0.7)
        combo = SampledSignal(2.0 * xa.samples - 0.5 * xb.samples, FS)
        lhs = propagate(combo, cfg).samples
        rhs = 2.0 * propagate(xa, cfg).samples - 0.5 * propagate(xb, cfg).samples
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_magnitude_spectrum_preserved(self):
        x = bandlimited_noise(5, 32_768, 300, 6_000)
        cfg = ChannelConfig(STEEL, distance_m=1.3)
        y = propagate(x, cfg)
        np.testing.assert_allclose(
            np.abs(np.fft.rfft(y.samples)), np.abs(np.fft.rfft(x.samples)),
            rtol=0, atol=1e-9 * np.abs(np.fft.rfft(x.samples)).max(),
        )

    def test_attenuation_applied(self):
        x = bandlimited_noise(6, 32_768, 900, 1_100)
        cfg = ChannelConfig(STEEL, distance_m=2.0, attenuation_db_per_m_per_khz=3.0)
        y = propagate(x, cfg)
        # narrowband around 1 kHz: expected loss = 3 dB/m/kHz * 1 kHz * 2 m = 6 dB
        loss_db = 20 * np.log10(np.linalg.norm(x.samples) / np.linalg.norm(y.samples))
        assert loss_db == pytest.approx(6.0, abs=0.3)

    def test_burst_envelope_delays_follow_group_velocity(self):
        # Two narrowband tone bursts through the plate. The phase profile
        # phi(f) = 2 pi L sqrt(f) / K has group delay L / (2 K sqrt(f)) =
        # tau(f) / 2: envelopes arrive at HALF the phase delay (group
        # velocity is twice phase velocity for the sqrt-f law), so the
        # measured envelope separation is (tau(1k) - tau(4k)) / 2.
        cfg = ChannelConfig(STEEL, distance_m=1.0)
        n = int(FS * 1.2)
        t = np.arange(n) / FS
        def burst(f0, t0, width=0.04):
            env = np.exp(-0.5 * ((t - t0) / width) ** 2)
            return env * np.cos(2 * np.pi * f0 * (t - t0))
        x = SampledSignal(0.4 * burst(1000.0, 0.3) + 0.4 * burst(4000.0, 0.3), FS)
        y = propagate(x, cfg)

        def envelope_arrival(sig, f0, bw=150.0):
            spec = np.fft.rfft(sig)
            freqs = np.fft.rfftfreq(n, 1 / FS)
            keep = np.abs(freqs - f0) < bw
            spec = np.where(keep, spec, 0)
            nb = np.fft.irfft(spec, n=n)
            env = np.abs(hilbert(nb))
            k = np.argmax(env)
            # quadratic interpolation around the peak
            if 0 < k < n - 1:
                a, b, c = env[k - 1], env[k], env[k + 1]
                k = k + 0.5 * (a - c) / (a - 2 * b + c)
            return k / FS

        d_in = envelope_arrival(x.samples, 1000.0) - envelope_arrival(x.samples, 4000.0)
        d_out = envelope_arrival(y.samples, 1000.0) - envelope_arrival(y.samples, 4000.0)
        measured = d_out - d_in
        tau = delay_profile(cfg, [1000.0, 4000.0])
        expected = (tau[0] - tau[1]) / 2.0
        assert measured == pytest.approx(expected, abs=3.0 / FS)

    def test_delay_spread_guard_names_padding(self):
        # 12 ms of 100-500 Hz content, 3 m of steel: spread >> duration
        x = bandlimited_noise(7, int(FS * 0.012), 100, 500)
        cfg = ChannelConfig(STEEL, distance_m=6.0)
        with pytest.raises(DelaySpreadError) as ei:
            propagate(x, cfg)
        assert ei.value.required_pad_samples > 0
        assert "zero-pad" in str(ei.value)
        # the worst-case bound always leaves room
        pad = worst_case_padding_samples(cfg, FS)
        padded = SampledSignal(np.concatenate([x.samples, np.zeros(pad)]), FS)
        propagate(padded, cfg)  # no longer raises

    def test_too_short_rejected(self):
        with pytest.raises(DispersionError):
            propagate(SampledSignal(np.array([1.0]), FS), ChannelConfig(STEEL, 1.0))


class TestCompensate:
    @pytest.mark.parametrize("n", [32_768, 32_769])  # even and odd grids
    def test_round_trip_exact_inverse(self, n):
        x = bandlimited_noise(8, n, 300, 5_000)
        cfg = ChannelConfig(STEEL, distance_m=1.0)
        back = propagate(compensate(x, cfg), cfg)
        rel = np.linalg.norm(back.samples - x.samples) / np.linalg.norm(x.samples)
        assert rel < 1e-6

    def test_vanishing_distance_is_identity(self):
        x = bandlimited_noise(9, 20_000, 500, 4_000)
        cfg = ChannelConfig(STEEL, distance_m=1e-12)
        y = compensate(x, cfg)
        rel = np.linalg.norm(y.samples - x.samples) / np.linalg.norm(x.samples)
        assert rel < 1e-9

    def test_chirp_precompensation_beats_raw_propagation(self):
        # 500 Hz - 4 kHz chirp over 1 m of a thin steel sheet: the
        # pre-compensated copy survives the channel, the raw copy
        # decorrelates. (Thin plate = slower waves = stronger curvature.)
        sheet = PlateMaterial("steel-sheet", 200e9, 7850.0, 0.002, 0.3)
        cfg = ChannelConfig(sheet, distance_m=1.0)
        n = int(FS * 0.6)
        t = np.arange(n) / FS
        dur = 0.02
        inside = t < dur
        f0, f1 = 500.0, 4000.0
        sweep = f0 + (f1 - f0) * t / dur
        chirp = np.where(inside, np.sin(2 * np.pi * sweep * t) *
                         np.sin(np.pi * np.minimum(t / dur, 1.0)) ** 2, 0.0)
        # leave room for the multi-ms dispersion delays
        x = SampledSignal(0.5 * np.roll(chirp, int(0.05 * FS)), FS)

        def peak_corr(sig):
            c = np.correlate(sig.samples, x.samples, mode="full")
            return np.max(np.abs(c)) / (np.linalg.norm(sig.samples) * np.linalg.norm(x.samples))

        raw = propagate(x, cfg)
        comp = propagate(compensate(x, cfg), cfg)
        assert peak_corr(comp) >= 0.999
        assert peak_corr(raw) < 0.9


class TestInvertChannel:
    def test_full_inversion_undoes_attenuation_and_phase(self):
        x = bandlimited_noise(10, 32_768, 500, 5_000)
        cfg = ChannelConfig(STEEL, distance_m=1.5, attenuation_db_per_m_per_khz=1.0)
        back = propagate(invert_channel(x, cfg), cfg)
        rel = np.linalg.norm(back.samples - x.samples) / np.linalg.norm(x.samples)
        assert rel < 1e-6

    def test_phase_only_when_no_attenuation(self):
        x = bandlimited_noise(11, 16_384, 500, 4_000)
        cfg = ChannelConfig(STEEL, distance_m=0.8)
        np.testing.assert_allclose(
            invert_channel(x, cfg).samples, compensate(x, cfg).samples, atol=1e-12
        )


class TestPresets:
    def test_five_materials_ship(self):
        presets = load_material_presets()
        assert set(presets) == {"wooden", "glass", "steel", "plastic", "mdf"}
        for p in presets.values():
            assert p.solid_speed_m_s > 0
            assert p.attenuation_db_per_m_per_khz >= 0

    def test_channel_helper(self):
        presets = load_material_presets()
        ch = presets["steel"].channel(0.5)
        assert ch.distance_m == 0.5
        assert ch.material.name == "steel"

    def test_env_var_override(self, tmp_path, monkeypatch):
        alt = tmp_path / "materials.ini"
        alt.write_text(
            "[custom]\nyoungs_modulus_pa = 1e9\ndensity_kg_m3 = 1000\n"
            "thickness_m = 0.01\npoisson_ratio = 0.3\n"
            "attenuation_db_per_m_per_khz = 0\nsolid_speed_m_s = 1000\n"
        )
        monkeypatch.setenv("SOLIDVOICE_MATERIALS", str(tmp_path))
        presets = load_material_presets()
        assert set(presets) == {"custom"}
