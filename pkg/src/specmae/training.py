"""Losses, per-step training ops, and the step-driven loops for all variants.

Batches and mask plans are keyed by (run seed, step index), never by loop
state, so runs are reproducible and a resumed run continues the identical
data stream. The validation loss recorded at step s is measured after the
parameter update of step s.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, no_grad
from .dsp import LOG_FLOOR, NormStats
from .model import MEL_VARIANTS, SpecMAE
from .optim import AdamW, Schedule, lr_at
from .patches import full_visible_plan, patchify_batch, sample_mask

def grid_of(chunks: np.ndarray) -> tuple:
    """(mel patches, time patches) of a [batch, n_mels, n_frames] stack."""
    return chunks.shape[1] // 16, chunks.shape[2] // 16


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainSettings:
    steps: int
    batch: int = 8
    peak_lr: float = 1e-3
    final_lr: float = 1e-6
    warmup_frac: float = 0.1
    weight_decay: float = 1e-4
    mask_ratio: float = 0.75
    seed: int = 0
    lambda_linear: float = 100.0
    loss_on_all_patches: bool = False
    val_every: int = 0  # 0 = only at the last step

    def schedule(self) -> Schedule:
        warmup = max(1, int(round(self.warmup_frac * self.steps)))
        warmup = min(warmup, self.steps - 1)  # single-step runs skip warmup
        return Schedule.from_steps(self.steps, max(0, warmup), self.peak_lr, self.final_lr)


@dataclass
class StepLog:
    step: int
    lr: float
    loss: float
    wall_ms: float


def _batch_indices(seed: int, step: int, n_items: int, batch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7C4, step]))
    return rng.integers(0, n_items, size=batch)


def _mask_seed(seed: int, step: int, slot: int) -> int:
    ss = np.random.SeedSequence([seed, 0x3A5C, step, slot])
    return int(ss.generate_state(2, dtype=np.uint64)[0])


# -- losses ----------------------------------------------------------------------

def se_loss_mel(pred_logmel, target_logmel, lam: float = 100.0) -> Tensor:
    """Dual-scale enhancement loss: MSE in log domain plus lam * MSE between
    the exponentiated (linear) mel spectra. Inputs are unnormalized natural
    logs of mel power."""
    pred = as_tensor(pred_logmel)
    target = as_tensor(target_logmel)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    lin = pred.exp() - target.exp()
    return (d * d).mean() + lam * (lin * lin).mean()


def masked_patch_mse(pred: Tensor, target: np.ndarray, plans) -> Tensor:
    """MSE over masked-patch entries only."""
    weights = np.stack([p.mask_vector() for p in plans]).astype(pred.data.dtype)
    total = weights.sum() * target.shape[-1]
    if total == 0:
        raise ValueError("no masked patches to score")
    d = pred - Tensor(np.asarray(target, dtype=pred.data.dtype))
    return (d * d * Tensor(weights[:, :, None])).sum() * (1.0 / total)


def all_patch_mse(pred: Tensor, target: np.ndarray) -> Tensor:
    d = pred - Tensor(np.asarray(target, dtype=pred.data.dtype))
    return (d * d).mean()


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy for integer labels."""
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    lse = logits.logsumexp(-1)
    picked = logits[np.arange(logits.shape[0]), labels]
    return (lse - picked).mean()


def se_variant_output(variant: str, net_out: Tensor, noisy_logmel_patches: np.ndarray,
                      stats: NormStats) -> Tensor:
    """Map raw network patch output to the predicted unnormalized log-mel.

    vanilla:        denormalize the prediction directly.
    additive:       noisy + residual (residual rescaled by std only).
    multiplicative: sigmoid mask on the linear mel, computed in log domain:
                    max(noisy + log_sigmoid(out), LOG_FLOOR).
    """
    noisy = Tensor(np.asarray(noisy_logmel_patches, dtype=net_out.data.dtype))
    if variant == "vanilla":
        return net_out * stats.std + stats.mean
    if variant == "additive":
        return noisy + net_out * stats.std
    if variant == "multiplicative":
        return (noisy + net_out.log_sigmoid()).maximum(LOG_FLOOR)
    raise ValueError(f"unknown SE variant {variant!r}")


# -- single steps -------------------------------------------------------------------

def _check_finite(batch: np.ndarray):
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch contains non-finite values")


def pretrain_step(model: SpecMAE, opt: AdamW, chunks_norm: np.ndarray, ratio: float,
                  lr: float, mask_seeds, loss_on_all=False) -> float:
    """One masked-reconstruction update on normalized 80x448 chunks."""
    _check_finite(chunks_norm)
    grid = grid_of(chunks_norm)
    patch_batch = patchify_batch(chunks_norm).astype(model.dtype)
    n_tokens = patch_batch.shape[1]
    plans = [sample_mask(n_tokens, ratio, s) for s in mask_seeds]
    pred = model.reconstruct(patch_batch, plans, grid)
    if loss_on_all or ratio == 0.0:
        loss = all_patch_mse(pred, patch_batch)
    else:
        loss = masked_patch_mse(pred, patch_batch, plans)
    loss.backward()
    opt.step(lr)
    return float(loss.data)


def se_finetune_step(model: SpecMAE, opt: AdamW, noisy_logmel: np.ndarray,
                     clean_logmel: np.ndarray, stats: NormStats, lr: float,
                     lam: float = 100.0) -> float:
    """One mel-to-mel enhancement update (variant taken from the model)."""
    if model.variant not in MEL_VARIANTS:
        raise ValueError(f"unknown SE variant {model.variant!r}")
    loss = se_forward_loss(model, noisy_logmel, clean_logmel, stats, lam)
    loss.backward()
    opt.step(lr)
    return float(loss.data)


def se_forward_loss(model: SpecMAE, noisy_logmel, clean_logmel, stats, lam=100.0) -> Tensor:
    _check_finite(noisy_logmel)
    grid = grid_of(np.asarray(noisy_logmel))
    noisy_p = patchify_batch(np.asarray(noisy_logmel, dtype=model.dtype))
    clean_p = patchify_batch(np.asarray(clean_logmel, dtype=model.dtype))
    norm_p = (noisy_p - stats.mean) * np.array(1.0 / stats.std, dtype=model.dtype)
    plans = [full_visible_plan(norm_p.shape[1])] * norm_p.shape[0]
    net_out = model.se_patch_output(norm_p.astype(model.dtype), plans, grid)
    pred = se_variant_output(model.variant, net_out, noisy_p, stats)
    return se_loss_mel(pred, clean_p, lam)


def istft_finetune_step(model: SpecMAE, opt: AdamW, noisy_logmel, noisy_mag, clean_mag,
                        stats: NormStats, lr: float) -> float:
    """One frame-mask update: L1 between masked and clean STFT magnitudes."""
    loss = istft_forward_loss(model, noisy_logmel, noisy_mag, clean_mag, stats)
    loss.backward()
    opt.step(lr)
    return float(loss.data)


def istft_forward_loss(model: SpecMAE, noisy_logmel, noisy_mag, clean_mag, stats) -> Tensor:
    noisy_mag = np.asarray(noisy_mag, dtype=model.dtype)
    clean_mag = np.asarray(clean_mag, dtype=model.dtype)
    if noisy_mag.shape != clean_mag.shape:
        raise ValueError("noisy/clean magnitude shapes disagree after chunking")
    mask = frame_mask(model, noisy_logmel, noisy_mag, stats)
    enhanced = mask * Tensor(noisy_mag)
    return (enhanced - Tensor(clean_mag)).abs().mean()


def frame_mask(model: SpecMAE, noisy_logmel, noisy_mag, stats) -> Tensor:
    """Sigmoid per-frame STFT mask [b, n_frames, n_freq]."""
    _check_finite(noisy_logmel)
    grid = grid_of(np.asarray(noisy_logmel))
    noisy_p = patchify_batch(np.asarray(noisy_logmel, dtype=model.dtype))
    norm_p = (noisy_p - stats.mean) * np.array(1.0 / stats.std, dtype=model.dtype)
    plans = [full_visible_plan(norm_p.shape[1])] * norm_p.shape[0]
    logits = model.frame_mask_logits(norm_p, plans, grid, noisy_mag)
    return logits.sigmoid()


def classify_finetune_step(model: SpecMAE, opt: AdamW, chunks_norm, labels, lr: float) -> float:
    """One cross-entropy update on the cls-token logits."""
    _check_finite(chunks_norm)
    grid = grid_of(np.asarray(chunks_norm))
    patch_batch = patchify_batch(np.asarray(chunks_norm, dtype=model.dtype))
    plans = [full_visible_plan(patch_batch.shape[1])] * patch_batch.shape[0]
    logits = model.classify(patch_batch, plans, grid)
    loss = cross_entropy(logits, labels)
    loss.backward()
    opt.step(lr)
    return float(loss.data)


# -- loops -----------------------------------------------------------------------------

def _run_steps(settings: TrainSettings, n_items: int, step_fn, val_fn=None):
    """Shared loop: schedule, seeded batches, divergence check, logging."""
    sched = settings.schedule()
    logs, val_logs = [], []
    for step in range(settings.steps):
        t0 = time.perf_counter()
        lr = lr_at(sched, step)
        idx = _batch_indices(settings.seed, step, n_items, settings.batch)
        loss = step_fn(step, idx, lr)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        logs.append(StepLog(step, lr, loss, (time.perf_counter() - t0) * 1e3))
        if val_fn is not None:
            last = step == settings.steps - 1
            if last or (settings.val_every and (step + 1) % settings.val_every == 0):
                val_logs.append((step, val_fn()))
    return logs, val_logs


def pretrain_loop(model: SpecMAE, opt: AdamW, chunks_norm: np.ndarray, settings: TrainSettings):
    """Masked-pretraining over a pool of normalized chunks."""

    def step_fn(step, idx, lr):
        seeds = [_mask_seed(settings.seed, step, i) for i in range(len(idx))]
        return pretrain_step(model, opt, chunks_norm[idx], settings.mask_ratio, lr,
                             seeds, settings.loss_on_all_patches)

    return _run_steps(settings, len(chunks_norm), step_fn)


def se_mel_loop(model: SpecMAE, opt: AdamW, noisy: np.ndarray, clean: np.ndarray,
                val_noisy, val_clean, stats: NormStats, settings: TrainSettings):
    """Fine-tune a mel variant on paired (noisy, clean) log-mel chunks."""

    def step_fn(step, idx, lr):
        return se_finetune_step(model, opt, noisy[idx], clean[idx], stats, lr,
                                settings.lambda_linear)

    def val_fn():
        with no_grad():
            return float(se_forward_loss(model, val_noisy, val_clean, stats,
                                         settings.lambda_linear).data)

    return _run_steps(settings, len(noisy), step_fn, val_fn if len(val_noisy) else None)


def se_istft_loop(model: SpecMAE, opt: AdamW, noisy_logmel, noisy_mag, clean_mag,
                  val_data, stats: NormStats, settings: TrainSettings):
    """Fine-tune the frame-mask variant on STFT magnitudes."""

    def step_fn(step, idx, lr):
        return istft_finetune_step(model, opt, noisy_logmel[idx], noisy_mag[idx],
                                   clean_mag[idx], stats, lr)

    def val_fn():
        v_logmel, v_nmag, v_cmag = val_data
        with no_grad():
            return float(istft_forward_loss(model, v_logmel, v_nmag, v_cmag, stats).data)

    return _run_steps(settings, len(noisy_logmel), step_fn,
                      val_fn if val_data is not None else None)


def classifier_loop(model: SpecMAE, opt: AdamW, chunks_norm, labels, val_chunks,
                    val_labels, stats: NormStats, settings: TrainSettings):
    """Fine-tune the cls head; validation metric is top-1 accuracy."""
    labels = np.asarray(labels)

    def step_fn(step, idx, lr):
        return classify_finetune_step(model, opt, chunks_norm[idx], labels[idx], lr)

    def val_fn():
        return classifier_accuracy(model, val_chunks, val_labels)

    return _run_steps(settings, len(chunks_norm), step_fn,
                      val_fn if val_chunks is not None and len(val_chunks) else None)


def classifier_logits(model: SpecMAE, chunks_norm, batch: int = 16) -> np.ndarray:
    outs = []
    grid = grid_of(np.asarray(chunks_norm))
    with no_grad():
        for lo in range(0, len(chunks_norm), batch):
            part = patchify_batch(np.asarray(chunks_norm[lo : lo + batch], dtype=model.dtype))
            plans = [full_visible_plan(part.shape[1])] * part.shape[0]
            outs.append(model.classify(part, plans, grid).data)
    return np.concatenate(outs, axis=0)


def classifier_accuracy(model: SpecMAE, chunks_norm, labels) -> float:
    logits = classifier_logits(model, chunks_norm)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
