"""DSP frontend/backend contracts."""

import numpy as np
import pytest

from specmae import dsp
from specmae.dsp import (EPS_FLOOR, EPS_STD, LOG_FLOOR, ComplexSpectrogram, MelSpectrogram,
                         NormStats, Waveform, compute_norm_stats, griffin_lim_vocode,
                         hann_periodic, istft, mel_filterbank, mel_to_magnitude,
                         spectral_convergence, stft, wave_to_logmel)

SR = 22050


def sine(freq, duration=1.0, amp=1.0, sr=SR, phase=0.0):
    t = np.arange(int(duration * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sample_rate=sr)


def brute_force_dft_frame(segment, n_fft=1024):
    """Independent DFT oracle: windowed frame -> one-sided spectrum."""
    win = hann_periodic(n_fft)
    n = np.arange(n_fft)
    k = np.arange(n_fft // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, n) / n_fft)
    return basis @ (segment * win)


class TestStft:
    def test_zero_wave_gives_zero_spectrogram_with_frame_arithmetic(self):
        s = stft(Waveform(np.zeros(SR)))
        assert s.bins.shape == (513, 87)  # 22050 // 256 + 1
        assert np.all(s.bins == 0)

    def test_impulse_at_frame_center_has_flat_magnitude(self):
        x = np.zeros(SR)
        t_frame = 5
        x[t_frame * 256] = 1.0  # lands on the window center of frame 5
        s = stft(Waveform(x))
        mags = np.abs(s.bins[:, t_frame])
        assert np.all(np.abs(mags - mags[0]) <= 1e-6 * mags[0])

    def test_1khz_sine_argmax_matches_brute_force_oracle(self):
        w = sine(1000.0)
        s = stft(w)
        # oracle: independent DFT of an interior frame built from the same
        # reflect-padded signal
        padded = np.pad(w.samples, 512, mode="reflect")
        t = 20
        oracle = brute_force_dft_frame(padded[t * 256 : t * 256 + 1024])
        assert np.argmax(np.abs(oracle)) == 46  # 1000 * 1024 / 22050 ~ 46.4
        np.testing.assert_allclose(s.bins[:, t], oracle, atol=1e-8)
        interior = np.abs(s.bins[:, 3:-3])
        assert np.all(np.argmax(interior, axis=0) == 46)

    def test_empty_and_nonfinite_errors(self):
        with pytest.raises(ValueError):
            stft(Waveform(np.array([])))
        with pytest.raises(ValueError):
            Waveform(np.array([1.0, np.nan]))

    def test_linearity_in_amplitude(self):
        w = sine(440.0, duration=0.5)
        s1 = stft(w).bins
        s3 = stft(Waveform(3.0 * w.samples)).bins
        np.testing.assert_allclose(s3, 3.0 * s1, rtol=1e-12, atol=1e-12)

    def test_rejects_bad_framing_params(self):
        w = sine(440.0, duration=0.2)
        with pytest.raises(ValueError):
            stft(w, n_fft=1000)
        with pytest.raises(ValueError):
            stft(w, n_fft=1024, hop=2048)


class TestIstft:
    def test_cola_round_trip_white_noise(self):
        rng = np.random.default_rng(11)
        w = Waveform(rng.standard_normal(SR))
        r = istft(stft(w))
        n = len(r)
        interior = slice(512, n - 512)
        err = np.sqrt(np.mean((r.samples[interior] - w.samples[:n][interior]) ** 2))
        ref = np.sqrt(np.mean(w.samples[:n][interior] ** 2))
        assert err / ref < 1e-6

    def test_zero_spectrogram_gives_zero_wave(self):
        s = ComplexSpectrogram(np.zeros((513, 40), dtype=complex))
        assert np.all(istft(s).samples == 0)

    def test_magnitude_with_analytic_phase_recovers_sine(self):
        # Build the spectrogram through an independent DFT of analytically
        # evaluated frames, then invert with istft only.
        w = sine(440.0, duration=1.0, amp=0.7, phase=0.3)
        padded = np.pad(w.samples, 512, mode="reflect")
        n_frames = len(w) // 256 + 1
        frames = np.stack([padded[t * 256 : t * 256 + 1024] for t in range(n_frames)])
        win = hann_periodic(1024)
        spec = np.fft.rfft(frames * win, axis=1).T
        oracle = ComplexSpectrogram(np.abs(spec) * np.exp(1j * np.angle(spec)))
        rec = istft(oracle)
        n = len(rec)
        interior = slice(512, n - 512)
        assert np.max(np.abs(rec.samples[interior] - w.samples[:n][interior])) < 1e-5

    def test_shape_mismatch_error(self):
        with pytest.raises(ValueError):
            ComplexSpectrogram(np.zeros((500, 10), dtype=complex), n_fft=1024)


class TestMelFilterbank:
    def test_shape_and_range(self):
        fb = mel_filterbank()
        assert fb.shape == (80, 513)
        assert fb.min() >= 0.0 and fb.max() <= 1.0
        assert np.all(fb.sum(axis=1) > 0)

    def test_peak_centers_strictly_increasing(self):
        fb = mel_filterbank()
        # oracle: the triangle centers from the analytic mel grid
        edges = dsp.mel_to_hz(np.linspace(dsp.hz_to_mel(0.0), dsp.hz_to_mel(SR / 2), 82))
        centers_hz = edges[1:-1]
        bin_hz = np.arange(513) * SR / 1024
        peaks = np.argmax(fb, axis=1)
        assert np.all(np.diff(peaks) > 0)
        assert np.all(np.abs(bin_hz[peaks] - centers_hz) <= SR / 1024)

    def test_degenerate_band_errors(self):
        with pytest.raises(ValueError):
            mel_filterbank(n_mels=300)  # rows with no FFT bin
        with pytest.raises(ValueError):
            mel_filterbank(f_min=8000.0, f_max=8000.0)
        with pytest.raises(ValueError):
            mel_filterbank(f_max=SR)

    def test_energy_conservation_bound(self):
        fb = mel_filterbank()
        rng = np.random.default_rng(3)
        p = rng.uniform(0, 5.0, size=(513, 7))
        out = fb @ p
        assert out.min() >= 0.0
        assert out.max() <= fb.sum(axis=1).max() * p.max() + 1e-12


class TestWaveToLogmel:
    def test_silence_hits_log_floor(self):
        m = wave_to_logmel(Waveform(np.zeros(SR)))
        assert m.scale == "log"
        assert np.all(m.values == LOG_FLOOR)

    def test_amplitude_doubling_shifts_by_ln4(self):
        w = sine(500.0, amp=0.4)
        m1 = wave_to_logmel(w).values
        m2 = wave_to_logmel(Waveform(2.0 * w.samples)).values
        above = m1 > LOG_FLOOR + 2.0  # clear of the floor on both sides
        np.testing.assert_allclose(m2[above] - m1[above], np.log(4.0), atol=1e-9)

    def test_frame_arithmetic_for_448_frame_chunks(self):
        w = Waveform(np.zeros(448 * 256))
        m = wave_to_logmel(w)
        assert m.values.shape == (80, 449)  # chunking keeps the first 448

    def test_normalization_tags_and_floor(self):
        stats = NormStats(-3.0, 2.0)
        m = wave_to_logmel(sine(700.0), stats=stats)
        assert m.scale == "log_norm"
        raw = wave_to_logmel(sine(700.0)).values
        np.testing.assert_allclose(m.values, (raw - -3.0) / 2.0, atol=1e-12)
        assert raw.min() >= LOG_FLOOR


class TestNormStats:
    def test_degenerate_corpus_clamps_std(self):
        m = MelSpectrogram(np.full((4, 6), -3.0), "log")
        stats = compute_norm_stats([m])
        assert stats.mean == pytest.approx(-3.0)
        assert stats.std == EPS_STD

    def test_two_constant_spectrograms(self):
        a = MelSpectrogram(np.full((4, 6), -1.0), "log")
        b = MelSpectrogram(np.full((4, 6), 1.0), "log")
        stats = compute_norm_stats([a, b])
        assert stats.mean == pytest.approx(0.0)
        assert stats.std == pytest.approx(1.0)

    def test_order_invariance_is_exact(self):
        rng = np.random.default_rng(5)
        items = [MelSpectrogram(rng.normal(-4, 2, size=(80, 30)), "log") for _ in range(5)]
        s1 = compute_norm_stats(items)
        s2 = compute_norm_stats(items[::-1])
        assert s1.mean == s2.mean and s1.std == s2.std

    def test_empty_corpus_errors(self):
        with pytest.raises(ValueError):
            compute_norm_stats([])

    def test_normalize_round_trip(self):
        stats = NormStats(-2.5, 3.7)
        x = np.linspace(-12, 4, 100)
        np.testing.assert_allclose(stats.denormalize(stats.normalize(x)), x, atol=1e-7)


class TestGriffinLim:
    def test_silence_vocodes_to_near_silence(self):
        m = MelSpectrogram(np.full((80, 87), LOG_FLOOR), "log")
        w = griffin_lim_vocode(m, iters=8)
        assert np.sqrt(np.mean(w.samples**2)) < 1e-4

    def test_spectral_convergence_nonincreasing(self):
        w = sine(330.0, duration=0.6, amp=0.4)
        mel = wave_to_logmel(w)
        fb = mel_filterbank()
        mag = mel_to_magnitude(np.exp(mel.values), fb)
        err8 = spectral_convergence(dsp.griffin_lim(mag, iters=8), mag)
        err64 = spectral_convergence(dsp.griffin_lim(mag, iters=64), mag)
        assert err64 <= err8 + 1e-12

    def test_sine_vocode_lands_on_the_right_bin(self):
        w = sine(500.0, duration=1.0, amp=0.4)
        target_bin = np.argmax(np.abs(stft(w).bins[:, 20]))
        voc = griffin_lim_vocode(wave_to_logmel(w), iters=32)
        spec = np.abs(stft(voc).bins)
        hot = np.argmax(spec[:, 10:-10], axis=0)
        median_bin = int(np.median(hot))
        assert abs(median_bin - target_bin) <= 2

    def test_rejects_normalized_input_and_bad_iters(self):
        m = MelSpectrogram(np.zeros((80, 10)), "log_norm")
        with pytest.raises(ValueError):
            griffin_lim_vocode(m)
        with pytest.raises(ValueError):
            dsp.griffin_lim(np.ones((513, 5)), iters=0)
