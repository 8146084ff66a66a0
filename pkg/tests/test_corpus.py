"""Synthetic corpus: determinism, spectral properties, mixing, chunking."""

import numpy as np
import pytest

from specmae.corpus import (CHUNK_SAMPLES, CorpusSpec, MixturePair, augment_gain,
                            command_class_band, command_item, cyclic_crop, item_seed,
                            make_chunks, mix_at_snr, pretrain_waveform, se_pair,
                            synth_clean, synth_command_dataset, synth_noise)
from specmae.dsp import Waveform, stft, wave_to_logmel

SR = 22050


def band_power(w: Waveform, lo, hi):
    spec = np.abs(np.fft.rfft(w.samples)) ** 2
    freqs = np.fft.rfftfreq(len(w), 1 / w.sample_rate)
    return spec[(freqs >= lo) & (freqs < hi)].sum()


def estimate_f0(w: Waveform, lo=80.0, hi=400.0):
    """Autocorrelation pitch oracle over voiced (high-energy) sections."""
    x = w.samples - w.samples.mean()
    ac = np.correlate(x, x, mode="full")[len(x) - 1 :]
    lag_lo, lag_hi = int(w.sample_rate / hi), int(w.sample_rate / lo)
    lag = lag_lo + int(np.argmax(ac[lag_lo:lag_hi]))
    return w.sample_rate / lag


class FixedRng:
    """Stub generator with scripted uniform/integers draws."""

    def __init__(self, uniform=0.0, integers=0):
        self._u, self._i = uniform, integers

    def uniform(self, *a, **k):
        return self._u

    def integers(self, *a, **k):
        return self._i


class TestSynthClean:
    def test_deterministic(self):
        a = synth_clean(123, duration=1.5)
        b = synth_clean(123, duration=1.5)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, synth_clean(124, duration=1.5).samples)

    def test_peak_is_half(self):
        w = synth_clean(7, duration=2.0)
        assert np.abs(w.samples).max() == pytest.approx(0.5, abs=1e-6)

    def test_energy_concentrated_below_4khz(self):
        for seed in (1, 2, 3):
            w = synth_clean(seed, duration=2.0)
            total = band_power(w, 0, SR / 2)
            low = band_power(w, 0, 4000.0)
            assert low / total >= 0.8

    def test_duration_validation(self):
        with pytest.raises(ValueError):
            synth_clean(0, duration=0.5)


class TestSynthNoise:
    def test_unit_rms_all_kinds(self):
        for kind in ("white", "pink", "babble"):
            w = synth_noise(5, kind, duration=1.5)
            assert np.sqrt(np.mean(w.samples**2)) == pytest.approx(1.0, abs=1e-3)
            assert np.array_equal(w.samples, synth_noise(5, kind, duration=1.5).samples)

    def test_pink_equal_power_per_octave(self):
        w = synth_noise(9, "pink", duration=4.0)
        p12 = band_power(w, 1000, 2000)
        p24 = band_power(w, 2000, 4000)
        assert abs(10 * np.log10(p24 / p12)) < 1.0

    def test_white_flat_spectrum(self):
        w = synth_noise(3, "white", duration=4.0)
        p12 = band_power(w, 1000, 2000)
        p24 = band_power(w, 2000, 4000)
        # flat noise doubles per octave (twice the bandwidth)
        assert abs(10 * np.log10(p24 / p12) - 3.0) < 1.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            synth_noise(0, "brown", 1.0)


class TestMixing:
    def test_unit_rms_at_0db_keeps_noise_scale_one(self):
        rng = np.random.default_rng(0)
        clean = Waveform(np.sin(2 * np.pi * 220 * np.arange(SR) / SR))  # RMS 1/sqrt2
        clean = Waveform(clean.samples / np.sqrt(np.mean(clean.samples**2)))
        noise = Waveform(rng.standard_normal(SR))
        noise = Waveform(noise.samples / np.sqrt(np.mean(noise.samples**2)))
        pair = mix_at_snr(clean, noise, 0.0)
        np.testing.assert_allclose(pair.noisy.samples - clean.samples, noise.samples,
                                   atol=1e-9)

    def test_20db_scales_noise_by_tenth(self):
        clean = Waveform(np.sin(2 * np.pi * 220 * np.arange(SR) / SR))
        clean = Waveform(clean.samples / np.sqrt(np.mean(clean.samples**2)))
        noise = Waveform(np.random.default_rng(1).standard_normal(SR))
        noise = Waveform(noise.samples / np.sqrt(np.mean(noise.samples**2)))
        pair = mix_at_snr(clean, noise, 20.0)
        scale = (pair.noisy.samples - clean.samples) / noise.samples
        np.testing.assert_allclose(scale, 0.1, atol=1e-9)

    def test_realized_snr_matches_requested(self):
        clean = synth_clean(11, 2.0)
        noise = synth_noise(12, "pink", 2.0)
        for snr in (-5.0, 0.0, 7.5, 15.0):
            pair = mix_at_snr(clean, noise, snr)
            scaled = pair.noisy.samples - pair.clean.samples
            realized = 10 * np.log10(np.mean(pair.clean.samples**2) / np.mean(scaled**2))
            assert realized == pytest.approx(snr, abs=1e-6)

    def test_silent_clean_rejected(self):
        with pytest.raises(ValueError):
            mix_at_snr(Waveform(np.zeros(1000)), synth_noise(0, "white", 1.0), 5.0)

    def test_noise_tiled_to_clean_length(self):
        clean = synth_clean(1, 2.0)
        noise = synth_noise(2, "white", 1.0)
        pair = mix_at_snr(clean, noise, 10.0)
        assert len(pair.noisy) == len(clean)

    def test_additivity_is_bit_exact(self):
        clean = synth_clean(3, 1.5)
        noise = synth_noise(4, "white", 1.5)
        pair = mix_at_snr(clean, noise, 5.0)
        scaled = pair.noisy.samples - clean.samples
        np.testing.assert_array_equal(clean.samples + scaled, pair.noisy.samples)


class TestAugmentation:
    def test_gain_plus_3db_factor(self):
        w = Waveform(np.ones(100))
        out = augment_gain(w, FixedRng(uniform=3.0))
        np.testing.assert_allclose(out.samples, 10 ** (3 / 20), rtol=1e-9)
        assert out.samples[0] == pytest.approx(1.4125, abs=2e-4)

    def test_gain_zero_is_identity(self):
        w = Waveform(np.linspace(-1, 1, 50))
        np.testing.assert_array_equal(augment_gain(w, FixedRng(uniform=0.0)).samples,
                                      w.samples)

    def test_gain_distribution(self):
        rng = np.random.default_rng(0)
        w = Waveform(np.ones(4))
        gains = np.array([
            20 * np.log10(augment_gain(w, rng).samples[0]) for _ in range(10000)
        ])
        assert gains.min() >= -6.0 and gains.max() <= 3.0
        assert gains.mean() == pytest.approx(-1.5, abs=0.1)
        assert gains.min() < -5.5 and gains.max() > 2.5

    def test_cyclic_crop_identity_at_zero_offset(self):
        w = Waveform(np.arange(64.0))
        out = cyclic_crop(w, 64, FixedRng(integers=0))
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_cyclic_crop_length_always_target(self):
        rng = np.random.default_rng(1)
        w = Waveform(np.arange(100.0))
        for target in (3, 100, 257):
            assert len(cyclic_crop(w, target, rng)) == target

    def test_cyclic_crop_preserves_multiset_at_full_length(self):
        rng = np.random.default_rng(2)
        w = Waveform(np.random.default_rng(0).standard_normal(128))
        for _ in range(5):
            out = cyclic_crop(w, 128, rng)
            np.testing.assert_array_equal(np.sort(out.samples), np.sort(w.samples))

    def test_cyclic_crop_validation(self):
        with pytest.raises(ValueError):
            cyclic_crop(Waveform(np.ones(4)), 0, FixedRng())


class TestChunks:
    def test_exact_chunk_consumes_114688_samples(self):
        assert CHUNK_SAMPLES == 448 * 256 == 114688
        w = Waveform(np.random.default_rng(0).standard_normal(CHUNK_SAMPLES) * 0.1)
        chunks = make_chunks(w)
        assert len(chunks) == 1
        assert chunks[0].values.shape == (80, 448)

    def test_short_wave_zero_padded_to_one_chunk(self):
        w = Waveform(np.random.default_rng(1).standard_normal(30000) * 0.1)
        chunks = make_chunks(w)
        assert len(chunks) == 1 and chunks[0].values.shape == (80, 448)

    def test_double_length_concatenates_to_full_logmel(self):
        w = Waveform(np.random.default_rng(2).standard_normal(2 * CHUNK_SAMPLES) * 0.1)
        chunks = make_chunks(w)
        assert len(chunks) == 2
        full = wave_to_logmel(w)
        got = np.concatenate([c.values for c in chunks], axis=1)
        np.testing.assert_array_equal(got, full.values[:, :896])


class TestDatasets:
    def test_split_streams_are_disjoint(self):
        seeds = {item_seed(0, split, i) for split in ("train", "val", "test")
                 for i in range(50)}
        assert len(seeds) == 150

    def test_se_pair_contract(self):
        spec = CorpusSpec(n_items=2, duration_s=5.5, seed=3)
        pair = se_pair(spec, "test", 0)
        assert len(pair.clean) == CHUNK_SAMPLES
        assert pair.snr_db == 5.0  # test split pins 5 dB
        train_pair = se_pair(spec, "train", 0)
        assert train_pair.snr_db in (0.0, 5.0, 10.0, 15.0)
        again = se_pair(spec, "test", 0)
        assert np.array_equal(again.noisy.samples, pair.noisy.samples)

    def test_pretrain_waveform_bounded_and_deterministic(self):
        spec = CorpusSpec(n_items=2, duration_s=5.5, seed=4)
        w = pretrain_waveform(spec, "train", 1)
        assert len(w) == CHUNK_SAMPLES
        assert np.all(np.abs(w.samples) <= 4.0)
        assert np.array_equal(w.samples, pretrain_waveform(spec, "train", 1).samples)

    def test_command_dataset_balance_and_determinism(self):
        spec = CorpusSpec(n_items=8, duration_s=5.5, seed=5, n_classes=4)
        items = synth_command_dataset(spec, "train")
        labels = [label for _, label in items]
        assert sorted(labels) == [0, 0, 1, 1, 2, 2, 3, 3]
        again = synth_command_dataset(spec, "train", workers=2)
        for (w1, l1), (w2, l2) in zip(items, again):
            assert l1 == l2 and np.array_equal(w1.samples, w2.samples)

    def test_command_classes_have_disjoint_f0_bands(self):
        bands = [command_class_band(k) for k in range(4)]
        for k in range(3):
            assert bands[k][1] < bands[k + 1][0]
        spec = CorpusSpec(n_items=8, duration_s=5.5, seed=6, n_classes=4)
        for idx in range(8):
            w, label = command_item(spec, "train", idx)
            f0 = estimate_f0(w)
            lo, hi = command_class_band(label)
            assert lo - 3 <= f0 <= hi + 3, (label, f0)

    def test_command_needs_two_classes(self):
        spec = CorpusSpec(n_items=2, duration_s=5.5, seed=0, n_classes=1)
        with pytest.raises(ValueError):
            command_item(spec, "train", 0)

    def test_mixture_pair_length_validation(self):
        with pytest.raises(ValueError):
            MixturePair(Waveform(np.ones(10)), Waveform(np.ones(12)), 0.0, "white")

    def test_corpus_spec_duration_validation(self):
        with pytest.raises(ValueError):
            CorpusSpec(n_items=1, duration_s=2.0)
