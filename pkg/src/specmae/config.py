"""Run configuration: JSON document with strict key checking.

Sections: dsp, model, corpus, train, io, eval. Unknown keys are rejected
with their full path; CLI flags override config fields; every run echoes the
fully resolved document to its output directory.
"""

import copy
import json

from .model import ModelConfig, desk_config, paper_config

DEFAULTS = {
    "dsp": {
        "sample_rate": 22050,
        "n_fft": 1024,
        "hop": 256,
        "n_mels": 80,
        "griffin_lim_iters": 64,
    },
    "model": {
        "preset": "desk",  # "desk", "paper", or "custom"
        "enc_layers": None,
        "enc_dim": None,
        "enc_heads": None,
        "dec_layers": None,
        "dec_dim": None,
        "dec_heads": None,
        "istft_dec_dim": None,
        "n_classes": None,
    },
    "corpus": {
        "kind": "synthetic",  # "synthetic" or "wav_dir"
        "n_items": 32,
        "val_items": 6,
        "test_items": 6,
        "duration_s": 5.5,
        "seed": 1234,
        "n_classes": 4,
        "wav_root": None,
    },
    "train": {
        "variant": "pretrain",
        "steps": 500,
        "batch": 8,
        "peak_lr": 1e-3,
        "final_lr": 1e-6,
        "warmup_frac": 0.1,
        "weight_decay": 1e-4,
        "mask_ratio": 0.75,
        "seed": 0,
        "lambda_linear": 100.0,
        "loss_on_all_patches": False,
        "val_every": 0,
        "init": "scratch",  # "scratch" or a checkpoint path
    },
    "io": {
        "out_dir": "runs/latest",
    },
    "eval": {
        "items": 8,
        "gl_iters": 32,
    },
}


class ConfigError(ValueError):
    pass


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here!r} must be a section object")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = value
    return out


def resolve_config(document: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge a user document and flat CLI overrides over the defaults.

    overrides maps dotted paths ("train.steps") to values; None values are
    skipped so unset CLI flags fall through.
    """
    cfg = _merge(DEFAULTS, document or {})
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        cfg[section][key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    if cfg["train"]["variant"] not in (
        "pretrain", "vanilla", "additive", "multiplicative", "istft", "classifier",
    ):
        raise ConfigError(f"unknown train.variant {cfg['train']['variant']!r}")
    if cfg["model"]["preset"] not in ("desk", "paper", "custom"):
        raise ConfigError(f"unknown model.preset {cfg['model']['preset']!r}")
    if cfg["corpus"]["kind"] not in ("synthetic", "wav_dir"):
        raise ConfigError(f"unknown corpus.kind {cfg['corpus']['kind']!r}")
    if cfg["corpus"]["kind"] == "wav_dir" and not cfg["corpus"]["wav_root"]:
        raise ConfigError("corpus.kind 'wav_dir' requires corpus.wav_root")
    for key in ("steps", "batch"):
        if int(cfg["train"][key]) < 1:
            raise ConfigError(f"train.{key} must be >= 1")
    if not 0.0 <= cfg["train"]["mask_ratio"] <= 1.0:
        raise ConfigError("train.mask_ratio must be in [0, 1]")


def load_config_file(path) -> dict:
    try:
        with open(path) as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return document


def model_config_from(cfg: dict) -> ModelConfig:
    """Build the ModelConfig: preset values, then explicit field overrides."""
    section = cfg["model"]
    base = {"desk": desk_config, "paper": paper_config, "custom": ModelConfig}[
        section["preset"]
    ]().to_dict()
    for key, value in section.items():
        if key != "preset" and value is not None:
            base[key] = value
    base["preset"] = section["preset"]
    return ModelConfig(**base)


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
