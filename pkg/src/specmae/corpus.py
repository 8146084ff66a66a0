"""Deterministic synthetic audio: speech-like signals, noises, SNR mixing,
augmentations, chunking, and a class-labeled command set.

Every generator is a pure function of (spec, split, index): item seeds come
from disjoint SeedSequence streams, so splits never collide and parallel
generation is reproducible. A WAV-directory ingestion path covers users with
real data (<root>/{clean,noisy}/<id>.wav for enhancement pairs,
<root>/<class>/<id>.wav for classification).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import wavio
from .dsp import HOP, SAMPLE_RATE, MelSpectrogram, Waveform, mel_filterbank, wave_to_logmel
from .patches import PATCH

CHUNK_FRAMES = 448
CHUNK_SAMPLES = CHUNK_FRAMES * HOP

NOISE_KINDS = ("white", "pink", "babble")
_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


@dataclass
class CorpusSpec:
    n_items: int
    duration_s: float = 5.5
    seed: int = 0
    n_classes: int = 4

    def __post_init__(self):
        if self.duration_s * SAMPLE_RATE < CHUNK_SAMPLES:
            raise ValueError(f"duration must cover one {CHUNK_FRAMES}-frame chunk")


@dataclass
class MixturePair:
    clean: Waveform
    noisy: Waveform
    snr_db: float
    noise_kind: str

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise ValueError("clean and noisy waveforms must have equal length")


def item_seed(root_seed: int, split: str, index: int, salt: int = 0) -> int:
    """Stable integer seed for item `index` of a split; splits never collide."""
    if split not in _SPLIT_IDS:
        raise ValueError(f"unknown split {split!r}")
    ss = np.random.SeedSequence([int(root_seed), _SPLIT_IDS[split], int(index), salt])
    return int(ss.generate_state(2, dtype=np.uint64)[0])


def item_rng(root_seed: int, split: str, index: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(item_seed(root_seed, split, index, salt))


# -- signal synthesis -----------------------------------------------------------

def _resonator(x: np.ndarray, freq: float, bandwidth: float, sr: int) -> np.ndarray:
    """Two-pole resonant filter, unity gain at resonance."""
    r = math.exp(-math.pi * bandwidth / sr)
    theta = 2.0 * math.pi * freq / sr
    a = [1.0, -2.0 * r * math.cos(theta), r * r]
    gain = (1.0 - r) * math.sqrt(1.0 - 2.0 * r * math.cos(2.0 * theta) + r * r)
    return lfilter([gain], a, x)


def _harmonic_source(rng, n, sr, f0_lo, f0_hi, vibrato_depth):
    f0 = rng.uniform(f0_lo, f0_hi)
    vib_rate = rng.uniform(4.0, 7.0)
    vib_phase = rng.uniform(0.0, 2.0 * math.pi)
    t = np.arange(n) / sr
    inst = f0 * (1.0 + vibrato_depth * np.sin(2.0 * math.pi * vib_rate * t + vib_phase))
    phase = 2.0 * math.pi * np.cumsum(inst) / sr
    n_harm = min(40, int(sr / 2 / (f0 * (1 + vibrato_depth)) ) - 1)
    out = np.zeros(n)
    for k in range(1, n_harm + 1):
        out += np.sin(k * phase) / k
    return out, f0


def _syllable_gate(rng, n, sr):
    """Amplitude envelope of syllable-like bursts with raised-cosine edges."""
    env = np.zeros(n)
    ramp = int(0.02 * sr)
    pos = int(0.01 * sr)
    while pos < n - ramp:
        on = int(rng.uniform(0.12, 0.25) * sr)
        off = int(rng.uniform(0.04, 0.12) * sr)
        end = min(pos + on, n)
        env[pos:end] = 1.0
        left = np.arange(min(ramp, n - pos))
        env[pos : pos + len(left)] = 0.5 * (1 - np.cos(np.pi * left / ramp))
        if end < n:
            right = np.arange(min(ramp, n - end))
            env[end - 1 : end - 1 + len(right)] = 0.5 * (1 + np.cos(np.pi * right / ramp))
        pos = end + off
    return env


def _synth_voiced(rng, duration, sr, f0_lo, f0_hi, vibrato_depth, formants):
    n = int(round(duration * sr))
    src, f0 = _harmonic_source(rng, n, sr, f0_lo, f0_hi, vibrato_depth)
    out = src
    for freq, bw in formants:
        out = _resonator(out, freq, bw, sr)
    out = out * _syllable_gate(rng, n, sr)
    peak = np.abs(out).max()
    if peak > 0:
        out = out * (0.5 / peak)
    return Waveform(out, sample_rate=sr), f0


def _random_formants(rng):
    return [
        (rng.uniform(300.0, 900.0), rng.uniform(60.0, 140.0)),
        (rng.uniform(1000.0, 2200.0), rng.uniform(90.0, 180.0)),
        (rng.uniform(2300.0, 3200.0), rng.uniform(120.0, 220.0)),
    ]


def synth_clean(seed, duration: float = 5.5, sr: int = SAMPLE_RATE) -> Waveform:
    """Speech-like signal: vibrato harmonic source through three random
    formant resonators, gated into syllable bursts, peak-normalized to 0.5."""
    if duration < 1.0:
        raise ValueError("duration must be >= 1 s")
    rng = np.random.default_rng(seed)
    w, _ = _synth_voiced(rng, duration, sr, 100.0, 300.0, 0.02, _random_formants(rng))
    return w


def synth_noise(seed, kind: str, duration: float = 5.5, sr: int = SAMPLE_RATE) -> Waveform:
    """Unit-RMS noise: flat white, -3 dB/octave pink, or 6-voice babble."""
    n = int(round(duration * sr))
    rng = np.random.default_rng(seed)
    if kind == "white":
        out = rng.standard_normal(n)
    elif kind == "pink":
        white = rng.standard_normal(n)
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / sr)
        shaping = np.zeros_like(freqs)
        shaping[1:] = 1.0 / np.sqrt(freqs[1:])
        out = np.fft.irfft(spec * shaping, n=n)
    elif kind == "babble":
        ss = np.random.SeedSequence([int(seed), 0xBABB1E])
        out = np.zeros(n)
        for child in ss.spawn(6):
            voice_rng = np.random.default_rng(child)
            w, _ = _synth_voiced(voice_rng, duration, sr, 100.0, 300.0, 0.02,
                                 _random_formants(voice_rng))
            out += w.samples
    else:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    rms = math.sqrt(float(np.mean(out * out)))
    return Waveform(out / rms, sample_rate=sr)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, noise_kind: str = "") -> MixturePair:
    """Scale noise so 10*log10(P_clean / P_noise) hits snr_db, then add."""
    p_clean = float(np.mean(clean.samples**2))
    if p_clean == 0.0:
        raise ValueError("cannot set an SNR against silent clean audio")
    noise_samples = noise.samples
    if len(noise_samples) != len(clean):
        noise_samples = np.resize(noise_samples, len(clean))
    p_noise = float(np.mean(noise_samples**2))
    scale = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    noisy = Waveform(clean.samples + scale * noise_samples, sample_rate=clean.sample_rate)
    return MixturePair(clean=clean, noisy=noisy, snr_db=snr_db, noise_kind=noise_kind)


# -- augmentation ----------------------------------------------------------------

def augment_gain(w: Waveform, rng: np.random.Generator) -> Waveform:
    """Random gain in [-6, +3] dB."""
    g = rng.uniform(-6.0, 3.0)
    return Waveform(w.samples * 10.0 ** (g / 20.0), sample_rate=w.sample_rate)


def cyclic_crop(w: Waveform, target_samples: int, rng: np.random.Generator) -> Waveform:
    """Random circular rotation, then the first target_samples (tiled if short)."""
    if target_samples < 1:
        raise ValueError("target_samples must be >= 1")
    offset = int(rng.integers(0, len(w)))
    rolled = np.concatenate([w.samples[offset:], w.samples[:offset]])
    return Waveform(np.resize(rolled, target_samples), sample_rate=w.sample_rate)


# -- chunking ----------------------------------------------------------------------

def pad_to_chunks(samples: np.ndarray, frames: int = CHUNK_FRAMES, hop: int = HOP) -> np.ndarray:
    """Zero-pad to a positive multiple of frames*hop samples."""
    span = frames * hop
    n_chunks = max(1, math.ceil(len(samples) / span))
    return np.pad(samples, (0, n_chunks * span - len(samples)))


def make_chunks(w: Waveform, frames: int = CHUNK_FRAMES, fb: np.ndarray | None = None,
                hop: int = HOP) -> list[MelSpectrogram]:
    """Split a waveform into fixed-length log-mel chunks (zero-padded)."""
    if fb is None:
        fb = mel_filterbank(sr=w.sample_rate)
    padded = Waveform(pad_to_chunks(w.samples, frames, hop), sample_rate=w.sample_rate)
    logmel = wave_to_logmel(padded, fb, hop=hop)
    n_chunks = len(padded) // (frames * hop)
    return [
        MelSpectrogram(logmel.values[:, i * frames : (i + 1) * frames], "log", w.sample_rate)
        for i in range(n_chunks)
    ]


# -- datasets -----------------------------------------------------------------------

def pretrain_waveform(spec: CorpusSpec, split: str, index: int) -> Waveform:
    """One general-audio item: clean voice, noise, or a mixture, augmented."""
    rng = item_rng(spec.seed, split, index)
    base = _synth_voiced(rng, spec.duration_s, SAMPLE_RATE, 100.0, 300.0, 0.02,
                         _random_formants(rng))[0]
    draw = rng.uniform()
    if draw < 0.5:
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        snr = float(rng.choice([0.0, 5.0, 10.0, 15.0]))
        noise = synth_noise(item_seed(spec.seed, split, index, salt=1), kind, spec.duration_s)
        w = mix_at_snr(base, noise, snr, kind).noisy
    elif draw < 0.75:
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        w = synth_noise(item_seed(spec.seed, split, index, salt=2), kind, spec.duration_s)
        w = Waveform(w.samples * 0.1, sample_rate=w.sample_rate)
    else:
        w = base
    w = augment_gain(w, rng)
    return cyclic_crop(w, CHUNK_SAMPLES, rng)


def se_pair(spec: CorpusSpec, split: str, index: int) -> MixturePair:
    """Paired clean/noisy item; train SNR drawn from {0,5,10,15} dB, val/test 5 dB."""
    rng = item_rng(spec.seed, split, index)
    clean = _synth_voiced(rng, spec.duration_s, SAMPLE_RATE, 100.0, 300.0, 0.02,
                          _random_formants(rng))[0]
    clean = cyclic_crop(clean, CHUNK_SAMPLES, rng)
    kind = NOISE_KINDS[index % len(NOISE_KINDS)]
    noise = synth_noise(item_seed(spec.seed, split, index, salt=3), kind, spec.duration_s)
    noise = cyclic_crop(noise, CHUNK_SAMPLES, rng)
    snr = float(rng.choice([0.0, 5.0, 10.0, 15.0])) if split == "train" else 5.0
    return mix_at_snr(clean, noise, snr, kind)


def command_class_band(label: int) -> tuple[float, float]:
    """Disjoint F0 band for one command class."""
    lo = 110.0 + 45.0 * label
    return lo, lo + 22.0


def command_item(spec: CorpusSpec, split: str, index: int) -> tuple[Waveform, int]:
    """Labeled command-like item; labels are balanced by construction."""
    if spec.n_classes < 2:
        raise ValueError("need at least 2 classes")
    label = index % spec.n_classes
    rng = item_rng(spec.seed, split, index, salt=4)
    f0_lo, f0_hi = command_class_band(label)
    # Fixed per-class formant template plus small per-item jitter.
    tmpl = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC1A55, label]))
    formants = [
        (tmpl.uniform(350.0, 850.0) * rng.uniform(0.97, 1.03), tmpl.uniform(70.0, 130.0)),
        (tmpl.uniform(1100.0, 2100.0) * rng.uniform(0.97, 1.03), tmpl.uniform(100.0, 170.0)),
        (tmpl.uniform(2400.0, 3100.0) * rng.uniform(0.97, 1.03), tmpl.uniform(130.0, 210.0)),
    ]
    w, _ = _synth_voiced(rng, spec.duration_s, SAMPLE_RATE, f0_lo, f0_hi, 0.005, formants)
    return cyclic_crop(w, CHUNK_SAMPLES, rng), label


def synth_command_dataset(spec: CorpusSpec, split: str = "train",
                          workers: int = 1) -> list[tuple[Waveform, int]]:
    return _parallel(lambda i: command_item(spec, split, i), spec.n_items, workers)


def build_pretrain_set(spec: CorpusSpec, split: str = "train", workers: int = 1) -> list[Waveform]:
    return _parallel(lambda i: pretrain_waveform(spec, split, i), spec.n_items, workers)


def build_se_set(spec: CorpusSpec, split: str = "train", workers: int = 1) -> list[MixturePair]:
    return _parallel(lambda i: se_pair(spec, split, i), spec.n_items, workers)


def _parallel(fn, n: int, workers: int):
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


# -- local WAV ingestion ---------------------------------------------------------------

def load_se_pairs_from_dir(root) -> tuple[list[tuple[str, MixturePair]], list[str]]:
    """Read <root>/{clean,noisy}/<id>.wav pairs; returns (pairs, skipped ids)."""
    root = Path(root)
    clean_dir, noisy_dir = root / "clean", root / "noisy"
    if not clean_dir.is_dir() or not noisy_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain clean/ and noisy/ subdirectories")
    clean_ids = {p.stem: p for p in sorted(clean_dir.glob("*.wav"))}
    noisy_ids = {p.stem: p for p in sorted(noisy_dir.glob("*.wav"))}
    skipped = sorted(set(clean_ids) ^ set(noisy_ids))
    pairs = []
    for stem in sorted(set(clean_ids) & set(noisy_ids)):
        clean = wavio.read_wav(clean_ids[stem])
        noisy = wavio.read_wav(noisy_ids[stem])
        n = min(len(clean), len(noisy))
        pairs.append((stem, MixturePair(
            Waveform(clean.samples[:n], clean.sample_rate),
            Waveform(noisy.samples[:n], noisy.sample_rate),
            snr_db=float("nan"), noise_kind="file",
        )))
    return pairs, skipped


def load_labeled_from_dir(root) -> tuple[list[tuple[Waveform, int]], list[str]]:
    """Read <root>/<class>/<id>.wav items; class names sort to label ids."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise FileNotFoundError(f"{root} must contain at least two class directories")
    items, names = [], [p.name for p in class_dirs]
    for label, cdir in enumerate(class_dirs):
        for path in sorted(cdir.glob("*.wav")):
            items.append((wavio.read_wav(path), label))
    return items, names
