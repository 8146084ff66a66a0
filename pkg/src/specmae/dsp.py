"""STFT/mel frontend and Griffin-Lim backend.

Conventions used throughout the package:
  - 22.05 kHz mono audio, 1024-point periodic Hann window, 256-point hop,
    centered frames with reflection padding.
  - 80-bin mel filterbank (HTK scale) applied to the STFT *power* spectrum.
  - Natural-log compression with a fixed linear-power floor, so exp() is the
    exact inverse of the log-mel representation.

Everything here is a pure function over immutable value objects; float64 is
used internally so the analysis/synthesis round trip is exact to ~1e-15.
"""

import math
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 22050
N_FFT = 1024
HOP = 256
N_MELS = 80

# Floor on linear mel power before the log, and floor on normalization std.
EPS_FLOOR = 1e-5
EPS_STD = 1e-8

LOG_FLOOR = math.log(EPS_FLOOR)


@dataclass
class Waveform:
    """Mono sample sequence at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be mono/1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """One-sided STFT: complex bins of shape [n_fft//2+1, n_frames]."""

    bins: np.ndarray
    n_fft: int = N_FFT
    hop: int = HOP
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2 or self.bins.shape[0] != self.n_fft // 2 + 1:
            raise ValueError(
                f"expected [{self.n_fft // 2 + 1} x n_frames] bins for n_fft={self.n_fft}, "
                f"got shape {self.bins.shape}"
            )
        if not np.all(np.isfinite(self.bins)):
            raise ValueError("spectrogram contains non-finite bins")

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


@dataclass
class MelSpectrogram:
    """Mel-frame matrix [n_mels, n_frames] with an explicit scale tag.

    scale is one of "linear" (power), "log" (natural log of floored power),
    or "log_norm" (log additionally normalized by train-set NormStats).
    """

    values: np.ndarray
    scale: str
    sample_rate: int = SAMPLE_RATE

    _SCALES = ("linear", "log", "log_norm")

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"mel values must be 2-D, got shape {self.values.shape}")
        if self.scale not in self._SCALES:
            raise ValueError(f"scale must be one of {self._SCALES}, got {self.scale!r}")
        if self.scale == "linear" and self.values.size and self.values.min() < 0:
            raise ValueError("linear-scale mel values must be non-negative")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    """Scalar mean/std over the log-mel bins of a training set."""

    mean: float
    std: float = field(default=1.0)

    def __post_init__(self):
        self.std = max(float(self.std), EPS_STD)
        self.mean = float(self.mean)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def hann_periodic(n_fft: int) -> np.ndarray:
    """Periodic Hann window; satisfies COLA for hop = n_fft/4."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft))


def stft(w: Waveform, n_fft: int = N_FFT, hop: int = HOP) -> ComplexSpectrogram:
    """Centered one-sided STFT with reflection padding of n_fft/2 samples.

    Produces floor(len(w)/hop) + 1 frames.
    """
    if len(w) == 0:
        raise ValueError("cannot STFT an empty waveform")
    if n_fft & (n_fft - 1) or n_fft <= 0:
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ValueError(f"hop must be in (0, n_fft], got {hop}")
    pad = n_fft // 2
    if len(w) <= pad:
        raise ValueError(f"waveform too short for n_fft={n_fft} reflection padding")

    x = np.pad(w.samples, pad, mode="reflect")
    n_frames = len(w) // hop + 1
    starts = np.arange(n_frames) * hop
    frames = x[starts[:, None] + np.arange(n_fft)[None, :]]
    spec = np.fft.rfft(frames * hann_periodic(n_fft), axis=1)
    return ComplexSpectrogram(spec.T, n_fft=n_fft, hop=hop, sample_rate=w.sample_rate)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Least-squares inverse STFT (window-weighted overlap-add).

    Output has (n_frames - 1) * hop samples; for a spectrogram produced by
    stft() this reconstructs the input exactly away from the n_fft/2 edges.
    """
    n_fft, hop = s.n_fft, s.hop
    win = hann_periodic(n_fft)
    frames = np.fft.irfft(s.bins.T, n=n_fft, axis=1)
    total = (s.n_frames - 1) * hop + n_fft
    acc = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(s.n_frames):
        lo = t * hop
        acc[lo : lo + n_fft] += frames[t] * win
        wsum[lo : lo + n_fft] += win * win
    good = wsum > 1e-10
    acc[good] /= wsum[good]
    pad = n_fft // 2
    out = acc[pad : pad + (s.n_frames - 1) * hop]
    return Waveform(out, sample_rate=s.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS,
    sr: int = SAMPLE_RATE,
    n_fft: int = N_FFT,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> np.ndarray:
    """Triangular HTK-mel filterbank, peak-normalized to 1, no area scaling.

    Returns a [n_mels, n_fft//2+1] matrix of weights in [0, 1].
    """
    if f_max is None:
        f_max = sr / 2.0
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if not 0 <= f_min < f_max <= sr / 2.0:
        raise ValueError(f"need 0 <= f_min < f_max <= sr/2, got ({f_min}, {f_max})")

    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    if np.any(np.diff(edges_hz) <= 0):
        raise ValueError("degenerate mel band: identical band edges")

    bin_hz = np.arange(n_fft // 2 + 1) * (sr / n_fft)
    lo, center, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz[None, :] - lo) / (center - lo)
    falling = (hi - bin_hz[None, :]) / (hi - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(fb.sum(axis=1) == 0):
        raise ValueError("degenerate mel band: a filter covers no FFT bin")
    return fb


def wave_to_logmel(
    w: Waveform,
    fb: np.ndarray | None = None,
    stats: NormStats | None = None,
    n_fft: int = N_FFT,
    hop: int = HOP,
) -> MelSpectrogram:
    """Log-mel analysis: ln(max(fb @ |STFT|^2, EPS_FLOOR)), optionally normalized."""
    if fb is None:
        fb = mel_filterbank(n_fft=n_fft, sr=w.sample_rate)
    if fb.shape[1] != n_fft // 2 + 1:
        raise ValueError(f"filterbank has {fb.shape[1]} bins, expected {n_fft // 2 + 1}")
    spec = stft(w, n_fft=n_fft, hop=hop)
    power = np.abs(spec.bins) ** 2
    logmel = np.log(np.maximum(fb @ power, EPS_FLOOR))
    if stats is not None:
        return MelSpectrogram(stats.normalize(logmel), "log_norm", sample_rate=w.sample_rate)
    return MelSpectrogram(logmel, "log", sample_rate=w.sample_rate)


def compute_norm_stats(corpus) -> NormStats:
    """Scalar mean/std over all bins of all log-mel items.

    Uses exactly-rounded summation so the result is independent of the corpus
    iteration order. std is clamped to EPS_STD.
    """
    counts, sums, sumsqs = [], [], []
    for item in corpus:
        values = item.values if isinstance(item, MelSpectrogram) else np.asarray(item)
        if isinstance(item, MelSpectrogram) and item.scale != "log":
            raise ValueError(f"norm stats expect log-scale mels, got {item.scale!r}")
        counts.append(float(values.size))
        sums.append(float(values.sum()))
        sumsqs.append(float(np.square(values, dtype=np.float64).sum()))
    if not counts:
        raise ValueError("cannot compute normalization stats over an empty corpus")
    n = math.fsum(counts)
    mean = math.fsum(sums) / n
    var = math.fsum(sumsqs) / n - mean * mean
    return NormStats(mean=mean, std=math.sqrt(max(var, 0.0)))


def mel_to_magnitude(mel_linear: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Approximate STFT magnitude from linear mel power.

    Cheap pseudo-inverse: filterbank transpose rescaled by column sums and
    clamped at zero. Mel bins sitting at the EPS_FLOOR are treated as silence
    (they carry no signal, only the floor).
    """
    if mel_linear.shape[0] != fb.shape[0]:
        raise ValueError(
            f"mel has {mel_linear.shape[0]} bands but filterbank has {fb.shape[0]}"
        )
    # The tolerance absorbs float32 round trips of the log values.
    mel = np.where(mel_linear <= EPS_FLOOR * 1.0001, 0.0, mel_linear)
    col = fb.sum(axis=0)
    inv = np.divide(fb.T, col[:, None], out=np.zeros_like(fb.T), where=col[:, None] > 0)
    power = np.maximum(inv @ mel, 0.0)
    return np.sqrt(power)


def griffin_lim(
    magnitude: np.ndarray,
    iters: int = 64,
    n_fft: int = N_FFT,
    hop: int = HOP,
    sample_rate: int = SAMPLE_RATE,
) -> Waveform:
    """Alternating-projection phase retrieval from an STFT magnitude.

    Starts from zero phase (deterministic); the spectral-convergence error is
    non-increasing over iterations.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if magnitude.shape[0] != n_fft // 2 + 1:
        raise ValueError(f"magnitude has {magnitude.shape[0]} bins, expected {n_fft // 2 + 1}")
    phase = np.zeros_like(magnitude)
    for _ in range(iters):
        spec = ComplexSpectrogram(
            magnitude * np.exp(1j * phase), n_fft=n_fft, hop=hop, sample_rate=sample_rate
        )
        rebuilt = stft(istft(spec), n_fft=n_fft, hop=hop)
        phase = np.angle(rebuilt.bins)
    final = ComplexSpectrogram(
        magnitude * np.exp(1j * phase), n_fft=n_fft, hop=hop, sample_rate=sample_rate
    )
    return istft(final)


def griffin_lim_vocode(
    m: MelSpectrogram,
    iters: int = 64,
    fb: np.ndarray | None = None,
    n_fft: int = N_FFT,
    hop: int = HOP,
) -> Waveform:
    """Default vocoder: unnormalized log-mel -> waveform via Griffin-Lim."""
    if m.scale != "log":
        raise ValueError(f"vocoder expects an unnormalized log mel, got scale {m.scale!r}")
    if fb is None:
        fb = mel_filterbank(n_mels=m.n_mels, sr=m.sample_rate, n_fft=n_fft)
    magnitude = mel_to_magnitude(np.exp(m.values), fb)
    return griffin_lim(magnitude, iters=iters, n_fft=n_fft, hop=hop, sample_rate=m.sample_rate)


def spectral_convergence(wave: Waveform, magnitude: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> float:
    """|| |STFT(wave)| - magnitude ||_F / ||magnitude||_F."""
    rebuilt = np.abs(stft(wave, n_fft=n_fft, hop=hop).bins)
    denom = np.linalg.norm(magnitude)
    if denom == 0:
        return float(np.linalg.norm(rebuilt))
    return float(np.linalg.norm(rebuilt - magnitude) / denom)
