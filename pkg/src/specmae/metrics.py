"""Waveform- and spectrum-domain quality metrics, plus the CSV eval report.

These stand in for licensed perceptual metrics at desk scale; the report
schema keeps one row per (item, metric) so externally computed scores can be
merged later.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dsp import Waveform

SI_SDR_CAP = 60.0


def si_sdr(est: Waveform, ref: Waveform) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +60.

    The reference is rescaled by the projection <est,ref>/<ref,ref> before
    the energy ratio, so the score ignores any global gain on est.
    """
    e, r = np.asarray(est.samples, dtype=np.float64), np.asarray(ref.samples, dtype=np.float64)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {r.shape}")
    denom = float(r @ r)
    if denom == 0.0:
        raise ValueError("reference signal is silent")
    target = (float(e @ r) / denom) * r
    err = e - target
    p_err = float(err @ err)
    p_tgt = float(target @ target)
    if p_err == 0.0:
        return SI_SDR_CAP
    return min(SI_SDR_CAP, 10.0 * math.log10(p_tgt / p_err))


def seg_snr(est: Waveform, ref: Waveform, frame: int = 512,
            clamp: tuple = (-10.0, 35.0), silence_power: float = 1e-8) -> float:
    """Mean per-frame SNR in dB, clamped per frame, skipping silent ref frames."""
    e, r = np.asarray(est.samples), np.asarray(ref.samples)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {r.shape}")
    n_frames = len(r) // frame
    vals = []
    for t in range(n_frames):
        seg_r = r[t * frame : (t + 1) * frame]
        seg_e = e[t * frame : (t + 1) * frame]
        p_ref = float(np.mean(seg_r**2))
        if p_ref < silence_power:
            continue
        p_err = float(np.mean((seg_r - seg_e) ** 2))
        snr = clamp[1] if p_err == 0.0 else 10.0 * math.log10(p_ref / p_err)
        vals.append(min(clamp[1], max(clamp[0], snr)))
    if not vals:
        raise ValueError("all reference frames are silent")
    return float(np.mean(vals))


def lsd(est_mag: np.ndarray, ref_mag: np.ndarray, floor: float = 1e-8) -> float:
    """Log-spectral distance between two [bins, frames] magnitude matrices.

    Per frame: RMS over bins of the difference of log10 of floored
    magnitudes; the result is the mean over frames. A uniform x10 magnitude
    scaling therefore gives exactly 1.0.
    """
    est_mag, ref_mag = np.asarray(est_mag), np.asarray(ref_mag)
    if est_mag.shape != ref_mag.shape:
        raise ValueError(f"shape mismatch: {est_mag.shape} vs {ref_mag.shape}")
    d = np.log10(np.maximum(est_mag, floor)) - np.log10(np.maximum(ref_mag, floor))
    return float(np.mean(np.sqrt(np.mean(d * d, axis=0))))


def top1_accuracy(logits: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax matches the label (ties -> lowest index)."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("logits must be a non-empty [batch, classes] matrix")
    if logits.shape[0] != labels.shape[0]:
        raise ValueError("one label per logit row required")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass
class EvalReport:
    """Per-item metric rows plus aggregate means, serializable as CSV."""

    variant: str = ""
    dataset: str = ""
    rows: list = field(default_factory=list)  # (item_id, metric, value)

    def add(self, item_id: str, metric: str, value: float):
        self.rows.append((str(item_id), metric, float(value)))

    def metric_names(self):
        seen = {}
        for _, metric, _ in self.rows:
            seen.setdefault(metric, None)
        return list(seen)

    def mean(self, metric: str) -> float:
        vals = [v for _, m, v in self.rows if m == metric]
        if not vals:
            raise KeyError(f"no rows for metric {metric!r}")
        return float(np.mean(vals))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["id", "metric", "value"])
            for item_id, metric, value in self.rows:
                writer.writerow([item_id, metric, f"{value:.6f}"])
            for metric in self.metric_names():
                writer.writerow(["__mean__", metric, f"{self.mean(metric):.6f}"])

    @classmethod
    def read_csv(cls, path):
        report = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                if row["id"] != "__mean__":
                    report.add(row["id"], row["metric"], float(row["value"]))
        return report
