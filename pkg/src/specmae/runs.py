"""Wiring between configs, corpora, training loops, and run artifacts.

Every training run writes to its output directory:
    config.json    - fully resolved configuration
    loss.csv       - step, lr, loss            (deterministic given seed)
    train_log.csv  - step, lr, loss, wall_ms   (includes wall time)
    val.csv        - step, <metric>            (when validation runs)
    checkpoint.ckpt
"""

import math
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import wavio
from .checkpoint import (Checkpoint, load_checkpoint, restore_model, resume_optimizer,
                         save_checkpoint, transfer_pretrained, verify_resume_fingerprint)
from .config import ConfigError, dump_config, model_config_from
from .corpus import CHUNK_FRAMES, CorpusSpec, make_chunks
from .dsp import NormStats, Waveform, compute_norm_stats, mel_filterbank, stft, EPS_FLOOR
from .enhance import enhance_waveform, evaluate_pairs
from .metrics import EvalReport
from .model import MEL_VARIANTS, SpecMAE
from .optim import AdamW
from .training import (TrainSettings, classifier_accuracy, classifier_loop,
                       pretrain_loop, se_istft_loop, se_mel_loop)


def workers_from_env() -> int:
    raw = os.environ.get("VITAE_NUM_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 4


def _settings(cfg: dict) -> TrainSettings:
    t = cfg["train"]
    return TrainSettings(
        steps=int(t["steps"]),
        batch=int(t["batch"]),
        peak_lr=float(t["peak_lr"]),
        final_lr=float(t["final_lr"]),
        warmup_frac=float(t["warmup_frac"]),
        weight_decay=float(t["weight_decay"]),
        mask_ratio=float(t["mask_ratio"]),
        seed=int(t["seed"]),
        lambda_linear=float(t["lambda_linear"]),
        loss_on_all_patches=bool(t["loss_on_all_patches"]),
        val_every=int(t["val_every"]),
    )


def _corpus_spec(cfg: dict, n_items: int) -> CorpusSpec:
    c = cfg["corpus"]
    return CorpusSpec(n_items=n_items, duration_s=float(c["duration_s"]),
                      seed=int(c["seed"]), n_classes=int(c["n_classes"]))


def _analyze_pair(pair, fb, with_mag=False):
    """Single-chunk log-mel (and optional magnitude frames) of a mixture pair."""
    out = {}
    for tag, wave in (("noisy", pair.noisy), ("clean", pair.clean)):
        spec = stft(wave)
        power = np.abs(spec.bins[:, :CHUNK_FRAMES]) ** 2
        out[f"{tag}_logmel"] = np.log(np.maximum(fb @ power, EPS_FLOOR)).astype(np.float32)
        if with_mag:
            out[f"{tag}_mag"] = np.abs(spec.bins[:, :CHUNK_FRAMES]).T.astype(np.float32)
    return out


def prepare_pretrain_chunks(cfg: dict):
    """Synthesize the pretraining pool; returns (chunks f32 [N,80,448], stats)."""
    spec = _corpus_spec(cfg, int(cfg["corpus"]["n_items"]))
    waves = corpus_mod.build_pretrain_set(spec, "train", workers=workers_from_env())
    mels = [make_chunks(w)[0] for w in waves]
    stats = compute_norm_stats(mels)
    chunks = np.stack([m.values for m in mels]).astype(np.float32)
    return chunks, stats


def prepare_se_items(cfg: dict, split: str, n_items: int, with_mag: bool):
    spec = _corpus_spec(cfg, n_items)
    pairs = corpus_mod.build_se_set(spec, split, workers=workers_from_env())
    fb = mel_filterbank()
    rows = [_analyze_pair(p, fb, with_mag) for p in pairs]
    data = {
        "pairs": pairs,
        "noisy_logmel": np.stack([r["noisy_logmel"] for r in rows]),
        "clean_logmel": np.stack([r["clean_logmel"] for r in rows]),
    }
    if with_mag:
        data["noisy_mag"] = np.stack([r["noisy_mag"] for r in rows])
        data["clean_mag"] = np.stack([r["clean_mag"] for r in rows])
    return data


def prepare_command_chunks(cfg: dict, split: str, n_items: int):
    spec = _corpus_spec(cfg, n_items)
    items = corpus_mod.synth_command_dataset(spec, split, workers=workers_from_env())
    chunks = np.stack([make_chunks(w)[0].values for w, _ in items]).astype(np.float32)
    labels = np.array([label for _, label in items], dtype=np.int64)
    return chunks, labels


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["io"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csvs(out: Path, logs, val_logs=None, val_name="val_loss"):
    with open(out / "loss.csv", "w") as f:
        f.write("step,lr,loss\n")
        for row in logs:
            f.write(f"{row.step},{row.lr:.10e},{row.loss:.10e}\n")
    with open(out / "train_log.csv", "w") as f:
        f.write("step,lr,loss,wall_ms\n")
        for row in logs:
            f.write(f"{row.step},{row.lr:.10e},{row.loss:.10e},{row.wall_ms:.3f}\n")
    if val_logs:
        with open(out / "val.csv", "w") as f:
            f.write(f"step,{val_name}\n")
            for step, value in val_logs:
                f.write(f"{step},{value:.10e}\n")


def _resolve_init(cfg: dict, model: SpecMAE) -> tuple[str, Checkpoint | None]:
    """Apply train.init; returns (provenance tag, checkpoint or None)."""
    init = cfg["train"]["init"]
    if init in (None, "scratch"):
        return "scratch", None
    path = Path(init)
    if not path.exists():
        raise ConfigError(f"init checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    if ckpt.variant == model.variant:
        verify_resume_fingerprint(ckpt, model.cfg, model.variant)
        for name, t in model.params:
            t.data = np.array(ckpt.tensors[name], dtype=t.data.dtype)
        return "resume", ckpt
    if ckpt.variant == "pretrain":
        transfer_pretrained(ckpt, model)
        return "pretrained", ckpt
    raise ConfigError(
        f"checkpoint variant {ckpt.variant!r} cannot initialize a {model.variant!r} run"
    )


def run_pretrain(cfg: dict):
    out = _out_dir(cfg)
    dump_config(cfg, out / "config.json")
    settings = _settings(cfg)
    chunks, stats = prepare_pretrain_chunks(cfg)
    chunks_norm = stats.normalize(chunks).astype(np.float32)

    model = SpecMAE.build(model_config_from(cfg), seed=settings.seed, variant="pretrain")
    opt = AdamW(model.params, weight_decay=settings.weight_decay)
    provenance, ckpt = _resolve_init(cfg, model)
    if provenance == "resume":
        opt = resume_optimizer(ckpt, model, weight_decay=settings.weight_decay)
        stats = ckpt.norm_stats or stats
    print(f"init={provenance}")

    logs, _ = pretrain_loop(model, opt, chunks_norm, settings)
    _write_csvs(out, logs)
    ckpt_path = out / "checkpoint.ckpt"
    save_checkpoint(ckpt_path, model, opt, settings.steps, stats,
                    meta={"init": provenance, "final_loss": logs[-1].loss})
    return ckpt_path, logs


def run_finetune_se(cfg: dict):
    variant = cfg["train"]["variant"]
    if variant not in MEL_VARIANTS + ("istft",):
        raise ConfigError(f"train.variant must be an SE variant, got {variant!r}")
    out = _out_dir(cfg)
    dump_config(cfg, out / "config.json")
    settings = _settings(cfg)
    with_mag = variant == "istft"

    train = prepare_se_items(cfg, "train", int(cfg["corpus"]["n_items"]), with_mag)
    n_val = int(cfg["corpus"]["val_items"])
    val = prepare_se_items(cfg, "val", n_val, with_mag) if n_val else None

    model = SpecMAE.build(model_config_from(cfg), seed=settings.seed, variant=variant)
    provenance, ckpt = _resolve_init(cfg, model)
    opt = AdamW(model.params, weight_decay=settings.weight_decay)
    if provenance == "resume":
        opt = resume_optimizer(ckpt, model, weight_decay=settings.weight_decay)
    print(f"init={provenance}")

    if ckpt is not None and ckpt.norm_stats is not None:
        stats = ckpt.norm_stats
    else:
        stats = compute_norm_stats(iter(train["noisy_logmel"].astype(np.float64)))

    if variant == "istft":
        val_data = None
        if val is not None:
            val_data = (val["noisy_logmel"], val["noisy_mag"], val["clean_mag"])
        logs, val_logs = se_istft_loop(model, opt, train["noisy_logmel"], train["noisy_mag"],
                                       train["clean_mag"], val_data, stats, settings)
    else:
        v_noisy = val["noisy_logmel"] if val is not None else np.empty((0,))
        v_clean = val["clean_logmel"] if val is not None else np.empty((0,))
        logs, val_logs = se_mel_loop(model, opt, train["noisy_logmel"], train["clean_logmel"],
                                     v_noisy, v_clean, stats, settings)

    _write_csvs(out, logs, val_logs, val_name="val_loss")
    ckpt_path = out / "checkpoint.ckpt"
    meta = {"init": provenance}
    if val_logs:
        meta["final_val_loss"] = val_logs[-1][1]
    save_checkpoint(ckpt_path, model, opt, settings.steps, stats, meta=meta)
    return ckpt_path, logs, val_logs


def run_finetune_cls(cfg: dict):
    if cfg["train"]["variant"] != "classifier":
        raise ConfigError("train.variant must be 'classifier' for finetune-cls")
    out = _out_dir(cfg)
    dump_config(cfg, out / "config.json")
    settings = _settings(cfg)

    n_classes = int(cfg["corpus"]["n_classes"])
    model_cfg = model_config_from(cfg)
    if model_cfg.n_classes != n_classes:
        raise ConfigError(
            f"model.n_classes={model_cfg.n_classes} does not match corpus.n_classes={n_classes}"
        )
    chunks, labels = prepare_command_chunks(cfg, "train", int(cfg["corpus"]["n_items"]))
    test_chunks, test_labels = prepare_command_chunks(cfg, "test", int(cfg["corpus"]["test_items"]))

    model = SpecMAE.build(model_cfg, seed=settings.seed, variant="classifier")
    provenance, ckpt = _resolve_init(cfg, model)
    opt = AdamW(model.params, weight_decay=settings.weight_decay)
    if provenance == "resume":
        opt = resume_optimizer(ckpt, model, weight_decay=settings.weight_decay)
    print(f"init={provenance}")

    if ckpt is not None and ckpt.norm_stats is not None:
        stats = ckpt.norm_stats
    else:
        stats = compute_norm_stats(iter(chunks.astype(np.float64)))
    chunks_norm = stats.normalize(chunks).astype(np.float32)
    test_norm = stats.normalize(test_chunks).astype(np.float32)

    if settings.val_every == 0:
        settings.val_every = max(1, math.ceil(len(chunks) / settings.batch))  # each epoch
    logs, val_logs = classifier_loop(model, opt, chunks_norm, labels, test_norm,
                                     test_labels, stats, settings)
    _write_csvs(out, logs, val_logs, val_name="top1")
    ckpt_path = out / "checkpoint.ckpt"
    meta = {"init": provenance, "final_top1": val_logs[-1][1] if val_logs else None}
    save_checkpoint(ckpt_path, model, opt, settings.steps, stats, meta=meta)
    return ckpt_path, logs, val_logs


def run_enhance(ckpt_path, in_wav, out_wav, dump_mel=None, gl_iters: int = 64):
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.variant not in MEL_VARIANTS + ("istft",):
        raise ConfigError(f"checkpoint variant {ckpt.variant!r} is not a speech enhancer")
    model = restore_model(ckpt)
    stats = ckpt.norm_stats
    if stats is None:
        raise ConfigError("checkpoint carries no normalization stats")
    wave = wavio.read_wav(in_wav)
    result = enhance_waveform(model, stats, wave, gl_iters=gl_iters)
    wavio.write_wav(out_wav, result.wave)
    if dump_mel:
        if result.enhanced_logmel is not None:
            np.save(dump_mel, result.enhanced_logmel.values)
        else:
            np.save(dump_mel, result.enhanced_magnitude)
    return result


def run_evaluate(ckpt_path, cfg: dict, out_csv=None) -> EvalReport:
    ckpt = load_checkpoint(ckpt_path)
    model = restore_model(ckpt)
    stats = ckpt.norm_stats or NormStats(0.0, 1.0)

    if model.variant == "classifier":
        chunks, labels = prepare_command_chunks(cfg, "test", int(cfg["corpus"]["test_items"]))
        chunks_norm = stats.normalize(chunks).astype(np.float32)
        report = EvalReport(variant=model.variant, dataset="synthetic-commands")
        from .training import classifier_logits

        logits = classifier_logits(model, chunks_norm)
        hits = np.argmax(logits, axis=1) == labels
        for i, hit in enumerate(hits):
            report.add(f"{i:04d}", "top1", float(hit))
    elif model.variant in MEL_VARIANTS + ("istft",):
        if cfg["corpus"]["kind"] == "wav_dir":
            pairs, skipped = corpus_mod.load_se_pairs_from_dir(cfg["corpus"]["wav_root"])
            for stem in skipped:
                print(f"warning: skipping unpaired item {stem!r}", file=sys.stderr)
        else:
            spec = _corpus_spec(cfg, int(cfg["eval"]["items"]))
            built = corpus_mod.build_se_set(spec, "test", workers=workers_from_env())
            pairs = [(f"{i:04d}", p) for i, p in enumerate(built)]
        report = evaluate_pairs(model, stats, pairs, gl_iters=int(cfg["eval"]["gl_iters"]))
    else:
        raise ConfigError(f"cannot evaluate a {model.variant!r} checkpoint")

    if out_csv:
        report.write_csv(out_csv)
    return report
