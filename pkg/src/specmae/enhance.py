"""Full-file enhancement paths and the paired evaluation harness.

Mel variants run wave -> log-mel -> patch decoder -> variant output ->
Griffin-Lim; the frame-mask (istft) variant masks the STFT magnitude and
reconstructs with the noisy phase. Both process the full signal as
448-frame chunks and restore the original length (within one hop, padded
back to exact length with trailing zeros).
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .corpus import CHUNK_FRAMES, MixturePair, pad_to_chunks
from .dsp import (EPS_FLOOR, HOP, ComplexSpectrogram, MelSpectrogram, NormStats,
                  Waveform, griffin_lim_vocode, mel_filterbank, stft, istft)
from .metrics import EvalReport, lsd, seg_snr, si_sdr
from .model import MEL_VARIANTS, SpecMAE
from .patches import full_visible_plan, patchify_batch, unpatchify_batch
from .training import frame_mask, grid_of, se_variant_output


@dataclass
class EnhanceResult:
    wave: Waveform
    enhanced_logmel: MelSpectrogram | None = None  # mel variants, pre-vocoder
    enhanced_magnitude: np.ndarray | None = None   # istft variant
    noisy_logmel: MelSpectrogram | None = None


def _split_chunks(values: np.ndarray, frames: int = CHUNK_FRAMES) -> np.ndarray:
    n = values.shape[1] // frames
    return np.stack([values[:, i * frames : (i + 1) * frames] for i in range(n)])


def enhance_logmel_chunks(model: SpecMAE, stats: NormStats, noisy_chunks: np.ndarray,
                          batch: int = 8) -> np.ndarray:
    """Enhanced unnormalized log-mel chunks [n, 80, 448] for a mel variant."""
    if model.variant not in MEL_VARIANTS:
        raise ValueError(f"{model.variant!r} is not a mel-to-mel variant")
    outs = []
    with no_grad():
        for lo in range(0, len(noisy_chunks), batch):
            part = np.asarray(noisy_chunks[lo : lo + batch], dtype=model.dtype)
            grid = grid_of(part)
            noisy_p = patchify_batch(part)
            norm_p = (noisy_p - stats.mean) * np.array(1.0 / stats.std, dtype=model.dtype)
            plans = [full_visible_plan(norm_p.shape[1])] * norm_p.shape[0]
            net_out = model.se_patch_output(norm_p, plans, grid)
            pred = se_variant_output(model.variant, net_out, noisy_p, stats)
            outs.append(unpatchify_batch(pred.data, *grid))
    return np.concatenate(outs, axis=0)


def _fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    if len(samples) >= n:
        return samples[:n]
    return np.pad(samples, (0, n - len(samples)))


def _peak_limit(samples: np.ndarray) -> np.ndarray:
    peak = np.abs(samples).max() if len(samples) else 0.0
    if peak > 1.0:
        samples = samples * (0.9 / peak)
    return samples


def enhance_waveform(model: SpecMAE, stats: NormStats, wave: Waveform,
                     gl_iters: int = 64, batch: int = 8) -> EnhanceResult:
    """Enhance a full waveform with whichever variant the model carries."""
    fb = mel_filterbank(sr=wave.sample_rate)
    padded = Waveform(pad_to_chunks(wave.samples), sample_rate=wave.sample_rate)
    spec = stft(padded)
    power = np.abs(spec.bins) ** 2
    logmel_full = np.log(np.maximum(fb @ power, EPS_FLOOR))
    n_frames = len(padded) // HOP  # full stft has one extra frame
    noisy_chunks = _split_chunks(logmel_full[:, :n_frames])

    if model.variant in MEL_VARIANTS:
        enhanced_chunks = enhance_logmel_chunks(model, stats, noisy_chunks, batch)
        enhanced = np.concatenate(list(enhanced_chunks), axis=1).astype(np.float64)
        mel = MelSpectrogram(enhanced, "log", wave.sample_rate)
        voc = griffin_lim_vocode(mel, iters=gl_iters, fb=fb)
        out = _peak_limit(_fit_length(voc.samples, len(wave)))
        return EnhanceResult(
            wave=Waveform(out, wave.sample_rate),
            enhanced_logmel=mel,
            noisy_logmel=MelSpectrogram(logmel_full[:, :n_frames], "log", wave.sample_rate),
        )

    if model.variant == "istft":
        mag_frames = np.abs(spec.bins).T[:n_frames]  # [n_frames, n_freq]
        mag_chunks = np.stack(
            [mag_frames[i * CHUNK_FRAMES : (i + 1) * CHUNK_FRAMES]
             for i in range(len(noisy_chunks))]
        )
        masks = []
        with no_grad():
            for lo in range(0, len(noisy_chunks), batch):
                m = frame_mask(model, noisy_chunks[lo : lo + batch],
                               mag_chunks[lo : lo + batch], stats)
                masks.append(m.data)
        mask_full = np.concatenate(masks, axis=0).reshape(-1, spec.bins.shape[0]).T
        # Extend to the full stft frame count by repeating the last column.
        mask_full = np.concatenate([mask_full, mask_full[:, -1:]], axis=1)
        enhanced_mag = mask_full * np.abs(spec.bins)
        phase = np.angle(spec.bins)
        rebuilt = istft(ComplexSpectrogram(enhanced_mag * np.exp(1j * phase),
                                           sample_rate=wave.sample_rate))
        out = _peak_limit(_fit_length(rebuilt.samples, len(wave)))
        return EnhanceResult(
            wave=Waveform(out, wave.sample_rate),
            enhanced_magnitude=enhanced_mag,
            noisy_logmel=MelSpectrogram(logmel_full[:, :n_frames], "log", wave.sample_rate),
        )

    raise ValueError(f"variant {model.variant!r} cannot enhance audio")


def evaluate_pairs(model: SpecMAE, stats: NormStats, pairs, gl_iters: int = 32,
                   dataset: str = "synthetic") -> EvalReport:
    """Per-item SI-SDR / segmental SNR / LSD for enhanced and noisy baselines.

    pairs: iterable of (item_id, MixturePair).
    """
    report = EvalReport(variant=model.variant, dataset=dataset)
    for item_id, pair in pairs:
        enh = enhance_waveform(model, stats, pair.noisy, gl_iters=gl_iters).wave
        _add_wave_metrics(report, item_id, enh, pair.clean, suffix="")
        _add_wave_metrics(report, item_id, pair.noisy, pair.clean, suffix="_noisy")
    return report


def _add_wave_metrics(report: EvalReport, item_id, est: Waveform, ref: Waveform, suffix: str):
    n = min(len(est), len(ref))
    est_c = Waveform(est.samples[:n], est.sample_rate)
    ref_c = Waveform(ref.samples[:n], ref.sample_rate)
    report.add(item_id, "si_sdr" + suffix, si_sdr(est_c, ref_c))
    report.add(item_id, "seg_snr" + suffix, seg_snr(est_c, ref_c))
    report.add(item_id, "lsd" + suffix,
               lsd(np.abs(stft(est_c).bins), np.abs(stft(ref_c).bins)))
