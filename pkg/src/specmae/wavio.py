"""WAV ingestion and export (PCM 16-bit little-endian mono).

Files at other sample rates are resampled to 22.05 kHz with a windowed-sinc
interpolator; quality is non-critical for this package.
"""

import wave as _wave

import numpy as np

from .dsp import SAMPLE_RATE, Waveform


def read_wav(path, target_sr: int = SAMPLE_RATE) -> Waveform:
    """Read a mono PCM16 WAV file, resampling to target_sr if needed."""
    with _wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2 or f.getcomptype() != "NONE":
            raise ValueError(f"{path}: expected uncompressed 16-bit PCM")
        sr = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    w = Waveform(samples, sample_rate=sr)
    if sr != target_sr:
        w = resample_sinc(w, target_sr)
    return w


def write_wav(path, w: Waveform) -> None:
    """Write a waveform as mono PCM16, clipping to [-1, 1)."""
    clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
    data = np.round(clipped * 32768.0).astype("<i2")
    with _wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(data.tobytes())


def resample_sinc(w: Waveform, target_sr: int, taps: int = 32) -> Waveform:
    """Windowed-sinc resampling to target_sr.

    Direct evaluation of y[j] = sum_k x[k] * fc * sinc(fc*(t_j - k)) * hann,
    with fc = min(1, target/source) for anti-aliasing on downsampling.
    """
    if target_sr <= 0:
        raise ValueError("target_sr must be positive")
    if target_sr == w.sample_rate:
        return w
    ratio = target_sr / w.sample_rate
    n_out = int(round(len(w) * ratio))
    fc = min(1.0, ratio)
    t = np.arange(n_out) / ratio
    base = np.floor(t).astype(np.int64)
    offsets = np.arange(-taps, taps + 1)
    idx = base[:, None] + offsets[None, :]
    frac = t[:, None] - idx
    kernel = fc * np.sinc(fc * frac)
    kernel *= 0.5 * (1.0 + np.cos(np.pi * np.clip(frac / (taps + 1), -1.0, 1.0)))
    idx = np.clip(idx, 0, len(w) - 1)
    padded = w.samples[idx]
    # Zero out-of-range taps instead of repeating edge samples.
    valid = (base[:, None] + offsets[None, :] >= 0) & (base[:, None] + offsets[None, :] < len(w))
    out = (padded * kernel * valid).sum(axis=1)
    return Waveform(out, sample_rate=target_sr)
