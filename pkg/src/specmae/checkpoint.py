"""Single-file checkpoints: JSON header + raw little-endian float32 payload.

Layout:
    8-byte magic "SMAE0001"
    uint64 LE header length
    UTF-8 JSON header: variant, step, config, config fingerprint, norm
        stats, and a tensor manifest (name, shape, offset in floats)
    payload: all tensors concatenated as float32 LE

load() verifies the fingerprint against the caller's config for resume;
transfer_pretrained() instead copies shape-matching backbone tensors into a
fresh fine-tune model (heads stay at their fresh initialization).
"""

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .dsp import NormStats
from .model import MEL_VARIANTS, ModelConfig, ParamStore, SpecMAE
from .optim import AdamW

MAGIC = b"SMAE0001"


def config_fingerprint(cfg: ModelConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.to_dict(), sort_keys=True).encode()
    ).hexdigest()


@dataclass
class Checkpoint:
    variant: str
    step: int
    config: ModelConfig
    fingerprint: str
    norm_stats: NormStats | None
    tensors: dict  # name -> float32 ndarray (params and optimizer buffers)
    meta: dict
    opt_step: int | None = None

    def param_tensors(self):
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}


def save_checkpoint(path, model: SpecMAE, opt: AdamW | None, step: int,
                    norm_stats: NormStats | None, meta: dict | None = None) -> None:
    entries = [(name, t.data) for name, t in model.params]
    if opt is not None:
        entries += list(opt.state_tensors())

    manifest, offset = [], 0
    for name, arr in entries:
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size

    header = {
        "format": 1,
        "variant": model.variant,
        "step": step,
        "opt_step": opt.step_count if opt is not None else None,
        "config": model.cfg.to_dict(),
        "fingerprint": config_fingerprint(model.cfg),
        "norm_stats": None if norm_stats is None else {"mean": norm_stats.mean, "std": norm_stats.std},
        "meta": meta or {},
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise ValueError(f"{path}: truncated header")
    header = json.loads(raw[16 : 16 + hlen].decode())
    payload = np.frombuffer(raw[16 + hlen :], dtype="<f4")

    total = sum(int(np.prod(e["shape"])) for e in header["tensors"])
    if payload.size != total:
        raise ValueError(f"{path}: truncated payload ({payload.size} of {total} floats)")

    tensors = {}
    for e in header["tensors"]:
        size = int(np.prod(e["shape"]))
        tensors[e["name"]] = payload[e["offset"] : e["offset"] + size].reshape(e["shape"]).copy()

    stats = header["norm_stats"]
    return Checkpoint(
        variant=header["variant"],
        step=header["step"],
        config=ModelConfig(**header["config"]),
        fingerprint=header["fingerprint"],
        norm_stats=None if stats is None else NormStats(**stats),
        tensors=tensors,
        meta=header.get("meta", {}),
        opt_step=header.get("opt_step"),
    )


def restore_model(ckpt: Checkpoint, dtype=np.float32) -> SpecMAE:
    """Rebuild the exact model a checkpoint was saved from."""
    model = SpecMAE.build(ckpt.config, seed=0, variant=ckpt.variant, dtype=dtype)
    if config_fingerprint(model.cfg) != ckpt.fingerprint:
        raise ValueError("checkpoint fingerprint does not match its own config")
    for name, t in model.params:
        t.data = np.array(ckpt.tensors[name], dtype=dtype)
    return model


def resume_optimizer(ckpt: Checkpoint, model: SpecMAE, **adamw_kwargs) -> AdamW:
    opt = AdamW(model.params, **adamw_kwargs)
    if any(k.startswith("adam.") for k in ckpt.tensors):
        opt.load_state(ckpt.tensors, int(ckpt.opt_step or 0))
    return opt


def verify_resume_fingerprint(ckpt: Checkpoint, cfg: ModelConfig, variant: str) -> None:
    if ckpt.variant != variant:
        raise ValueError(f"checkpoint variant {ckpt.variant!r} does not match run variant {variant!r}")
    if ckpt.fingerprint != config_fingerprint(cfg):
        raise ValueError("checkpoint fingerprint does not match the run config")


# Backbone prefixes a pretrain checkpoint can seed in each fine-tune variant.
_TRANSFER_PREFIXES = {
    **{v: ("embed.", "cls", "enc.", "dec.", "mask_token") for v in MEL_VARIANTS},
    "istft": ("embed.", "cls", "enc."),
    "classifier": ("embed.", "cls", "enc."),
}


def transfer_pretrained(ckpt: Checkpoint, model: SpecMAE) -> list[str]:
    """Copy pretrained backbone weights into a fine-tune model.

    Mel SE variants receive encoder + decoder (their zero-init head stays);
    the istft frame decoder and the classifier receive encoder-only.
    Returns the names actually copied; raises on shape mismatch.
    """
    if ckpt.variant != "pretrain":
        raise ValueError(f"can only transfer from a pretrain checkpoint, got {ckpt.variant!r}")
    if model.variant not in _TRANSFER_PREFIXES:
        raise ValueError(f"no transfer mapping for variant {model.variant!r}")
    prefixes = _TRANSFER_PREFIXES[model.variant]
    src = ckpt.param_tensors()
    copied = []
    for name, t in model.params:
        if not name.startswith(prefixes) or name not in src:
            continue
        if tuple(src[name].shape) != t.data.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {src[name].shape} vs model {t.data.shape}"
            )
        t.data = np.array(src[name], dtype=t.data.dtype)
        copied.append(name)
    if not copied:
        raise ValueError("transfer copied no tensors; configs are incompatible")
    return copied
