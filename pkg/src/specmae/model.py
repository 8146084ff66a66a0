"""Transformer encoder/decoder over spectrogram patches, plus task heads.

The architecture is a pre-norm ViT pair: patches are linearly embedded,
fixed 2-D sinusoidal position codes are added (half the channels encode the
mel-patch index, half the time-patch index), a learned cls token is
prepended, and the encoder runs only over visible tokens. The decoder
re-expands the sequence with a learned mask token, re-adds positions, and
predicts the 256 values of every patch.

Heads:
  recon      - patch reconstruction for masked pretraining (dec_dim -> 256)
  se         - patch output for the mel enhancement variants (zero-init)
  cls        - single linear layer on the encoder cls feature
  frame mask - per-STFT-frame sigmoid mask from the frame decoder (istft
               variant), whose tokens fuse the projected noisy magnitude
               with time-aligned encoder features
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Tensor, concat, scatter_tokens
from .patches import PATCH, MaskPlan

VARIANTS = ("pretrain", "vanilla", "additive", "multiplicative", "istft", "classifier")
MEL_VARIANTS = ("vanilla", "additive", "multiplicative")


@dataclass
class ModelConfig:
    enc_layers: int = 4
    enc_dim: int = 192
    enc_heads: int = 4
    dec_layers: int = 2
    dec_dim: int = 96
    dec_heads: int = 4
    mlp_ratio: int = 4
    patch_dim: int = PATCH * PATCH
    n_tokens_max: int = 512
    n_classes: int = 4
    istft_dec_dim: int = 128
    n_freq: int = 513
    preset: str = "desk"

    def __post_init__(self):
        for dim, heads, tag in (
            (self.enc_dim, self.enc_heads, "encoder"),
            (self.dec_dim, self.dec_heads, "decoder"),
            (self.istft_dec_dim, self.dec_heads, "frame decoder"),
        ):
            if dim % heads:
                raise ValueError(f"{tag} dim {dim} not divisible by heads {heads}")
        if self.enc_dim % 4 or self.dec_dim % 4:
            raise ValueError("encoder/decoder dims must be divisible by 4 for 2-D positions")

    @property
    def mlp_hidden_enc(self) -> int:
        return self.mlp_ratio * self.enc_dim

    def to_dict(self) -> dict:
        return asdict(self)


def desk_config(**overrides) -> ModelConfig:
    """Small preset that trains on a CPU in minutes."""
    cfg = dict(enc_layers=4, enc_dim=192, enc_heads=4, dec_layers=2, dec_dim=96,
               dec_heads=4, istft_dec_dim=128, preset="desk")
    cfg.update(overrides)
    return ModelConfig(**cfg)


def paper_config(**overrides) -> ModelConfig:
    """Full-size preset: 12x768x12 encoder, 4x384x8 decoder, 512-wide frame decoder."""
    cfg = dict(enc_layers=12, enc_dim=768, enc_heads=12, dec_layers=4, dec_dim=384,
               dec_heads=8, istft_dec_dim=512, preset="paper")
    cfg.update(overrides)
    return ModelConfig(**cfg)


class ParamStore:
    """Ordered name -> Tensor map; every tensor has a paired gradient buffer."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())


def _trunc_normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) resampled outside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def _add_block(store, rng, prefix, dim, mlp_hidden, dtype):
    z = lambda *s: np.zeros(s, dtype=dtype)
    store.add(f"{prefix}.ln1.g", np.ones(dim, dtype=dtype))
    store.add(f"{prefix}.ln1.b", z(dim))
    store.add(f"{prefix}.qkv.w", _trunc_normal(rng, (dim, 3 * dim), dtype=dtype))
    store.add(f"{prefix}.qkv.b", z(3 * dim))
    store.add(f"{prefix}.proj.w", _trunc_normal(rng, (dim, dim), dtype=dtype))
    store.add(f"{prefix}.proj.b", z(dim))
    store.add(f"{prefix}.ln2.g", np.ones(dim, dtype=dtype))
    store.add(f"{prefix}.ln2.b", z(dim))
    store.add(f"{prefix}.mlp1.w", _trunc_normal(rng, (dim, mlp_hidden), dtype=dtype))
    store.add(f"{prefix}.mlp1.b", z(mlp_hidden))
    store.add(f"{prefix}.mlp2.w", _trunc_normal(rng, (mlp_hidden, dim), dtype=dtype))
    store.add(f"{prefix}.mlp2.b", z(dim))


def init_params(cfg: ModelConfig, seed, variant: str = "pretrain", dtype=np.float32) -> ParamStore:
    """Build all trainable tensors a variant needs.

    Weights are truncated-normal (std 0.02), biases zero, layer-norm gains
    one. SE-style output heads are zero-initialized so the variant starts at
    its identity behavior. Positional embeddings are fixed (not stored).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    z = lambda *s: np.zeros(s, dtype=dtype)

    store.add("embed.w", _trunc_normal(rng, (cfg.patch_dim, cfg.enc_dim), dtype=dtype))
    store.add("embed.b", z(cfg.enc_dim))
    store.add("cls", _trunc_normal(rng, (cfg.enc_dim,), dtype=dtype))
    for i in range(cfg.enc_layers):
        _add_block(store, rng, f"enc.{i}", cfg.enc_dim, cfg.mlp_ratio * cfg.enc_dim, dtype)
    store.add("enc.norm.g", np.ones(cfg.enc_dim, dtype=dtype))
    store.add("enc.norm.b", z(cfg.enc_dim))

    if variant in ("pretrain",) + MEL_VARIANTS:
        store.add("dec.embed.w", _trunc_normal(rng, (cfg.enc_dim, cfg.dec_dim), dtype=dtype))
        store.add("dec.embed.b", z(cfg.dec_dim))
        store.add("mask_token", _trunc_normal(rng, (cfg.dec_dim,), dtype=dtype))
        for i in range(cfg.dec_layers):
            _add_block(store, rng, f"dec.{i}", cfg.dec_dim, cfg.mlp_ratio * cfg.dec_dim, dtype)
        store.add("dec.norm.g", np.ones(cfg.dec_dim, dtype=dtype))
        store.add("dec.norm.b", z(cfg.dec_dim))

    if variant == "pretrain":
        store.add("head.recon.w", _trunc_normal(rng, (cfg.dec_dim, cfg.patch_dim), dtype=dtype))
        store.add("head.recon.b", z(cfg.patch_dim))
    elif variant in MEL_VARIANTS:
        store.add("head.se.w", z(cfg.dec_dim, cfg.patch_dim))
        store.add("head.se.b", z(cfg.patch_dim))
    elif variant == "classifier":
        store.add("head.cls.w", _trunc_normal(rng, (cfg.enc_dim, cfg.n_classes), dtype=dtype))
        store.add("head.cls.b", z(cfg.n_classes))
    elif variant == "istft":
        d = cfg.istft_dec_dim
        store.add("fdec.mag.w", _trunc_normal(rng, (cfg.n_freq, d), dtype=dtype))
        store.add("fdec.mag.b", z(d))
        store.add("fdec.fuse.w", _trunc_normal(rng, (d + cfg.enc_dim, d), dtype=dtype))
        store.add("fdec.fuse.b", z(d))
        for i in range(cfg.dec_layers):
            _add_block(store, rng, f"fdec.{i}", d, cfg.mlp_ratio * d, dtype)
        store.add("fdec.norm.g", np.ones(d, dtype=dtype))
        store.add("fdec.norm.b", z(d))
        store.add("head.mask.w", z(d, cfg.n_freq))
        store.add("head.mask.b", z(cfg.n_freq))
    return store


# -- fixed sinusoidal positions ------------------------------------------------

def _sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    if dim % 2:
        raise ValueError("sincos dim must be even")
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half) / half))
    args = positions[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def grid_positions(n_mel_patches: int, n_time_patches: int, dim: int) -> np.ndarray:
    """2-D sincos table [n_patches, dim] in patch order (time fastest)."""
    mel_idx = np.repeat(np.arange(n_mel_patches), n_time_patches).astype(np.float64)
    time_idx = np.tile(np.arange(n_time_patches), n_mel_patches).astype(np.float64)
    half = dim // 2
    table = np.concatenate([_sincos_1d(mel_idx, half), _sincos_1d(time_idx, half)], axis=1)
    return table.astype(np.float32)


def frame_positions(n_frames: int, dim: int) -> np.ndarray:
    """1-D sincos table for the frame decoder."""
    return _sincos_1d(np.arange(n_frames, dtype=np.float64), dim).astype(np.float32)


# -- forward pieces --------------------------------------------------------------

def transformer_block(x: Tensor, store: ParamStore, prefix: str, n_heads: int) -> Tensor:
    """Pre-norm block: x + MHSA(LN(x)); x + MLP(LN(x)) with GELU."""
    b, n, d = x.shape
    if d % n_heads:
        raise ValueError(f"token dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    h = x.layer_norm(store[f"{prefix}.ln1.g"], store[f"{prefix}.ln1.b"])
    qkv = h @ store[f"{prefix}.qkv.w"] + store[f"{prefix}.qkv.b"]
    qkv = qkv.reshape(b, n, 3, n_heads, dh)
    q = qkv[:, :, 0].swapaxes(1, 2)
    k = qkv[:, :, 1].swapaxes(1, 2)
    v = qkv[:, :, 2].swapaxes(1, 2)
    att = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    att = att.softmax(-1)
    ctx = (att @ v).swapaxes(1, 2).reshape(b, n, d)
    x = x + (ctx @ store[f"{prefix}.proj.w"] + store[f"{prefix}.proj.b"])

    h = x.layer_norm(store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"])
    h = (h @ store[f"{prefix}.mlp1.w"] + store[f"{prefix}.mlp1.b"]).gelu()
    return x + (h @ store[f"{prefix}.mlp2.w"] + store[f"{prefix}.mlp2.b"])


def attention_rows(x_data: np.ndarray, store: ParamStore, prefix: str, n_heads: int) -> np.ndarray:
    """Softmax attention matrix of one block, for invariant checks."""
    b, n, d = x_data.shape
    dh = d // n_heads
    mu = x_data.mean(-1, keepdims=True)
    xc = x_data - mu
    xhat = xc / np.sqrt((xc * xc).mean(-1, keepdims=True) + 1e-5)
    h = xhat * store[f"{prefix}.ln1.g"].data + store[f"{prefix}.ln1.b"].data
    qkv = (h @ store[f"{prefix}.qkv.w"].data + store[f"{prefix}.qkv.b"].data)
    qkv = qkv.reshape(b, n, 3, n_heads, dh)
    q, k = qkv[:, :, 0].swapaxes(1, 2), qkv[:, :, 1].swapaxes(1, 2)
    scores = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(dh)
    scores -= scores.max(-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(-1, keepdims=True)


class SpecMAE:
    """Config + parameters + variant, with the forward paths of each task."""

    def __init__(self, cfg: ModelConfig, params: ParamStore, variant: str = "pretrain"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.cfg = cfg
        self.params = params
        self.variant = variant

    @classmethod
    def build(cls, cfg: ModelConfig, seed, variant: str = "pretrain", dtype=np.float32):
        return cls(cfg, init_params(cfg, seed, variant, dtype), variant)

    @property
    def dtype(self):
        return self.params["embed.w"].data.dtype

    # -- encoder ------------------------------------------------------------

    def encode(self, visible_patches, plans: list[MaskPlan], grid_shape, use_positions=True) -> Tensor:
        """Encode visible patches; returns [b, 1 + n_visible, enc_dim].

        visible_patches: [b, n_visible, patch_dim] array or Tensor, rows in
        ascending patch-index order per the plans.
        """
        x = visible_patches if isinstance(visible_patches, Tensor) else Tensor(
            np.asarray(visible_patches, dtype=self.dtype)
        )
        b, nv, _ = x.shape
        if nv + 1 > self.cfg.n_tokens_max:
            raise ValueError(f"{nv + 1} tokens exceed n_tokens_max={self.cfg.n_tokens_max}")
        if len(plans) != b:
            raise ValueError("one mask plan per example required")
        store = self.params
        tok = x @ store["embed.w"] + store["embed.b"]
        if use_positions:
            pos = grid_positions(*grid_shape, self.cfg.enc_dim)
            vis_pos = np.stack([pos[p.visible_idx] for p in plans])
            tok = tok + Tensor(vis_pos)
        cls = store["cls"].reshape(1, 1, self.cfg.enc_dim)
        cls_rows = concat([cls] * b, axis=0) if b > 1 else cls
        tok = concat([cls_rows, tok], axis=1)
        for i in range(self.cfg.enc_layers):
            tok = transformer_block(tok, store, f"enc.{i}", self.cfg.enc_heads)
        return tok.layer_norm(store["enc.norm.g"], store["enc.norm.b"])

    # -- patch decoder ------------------------------------------------------

    def decode_patches(self, enc_feats: Tensor, plans: list[MaskPlan], grid_shape, head: str) -> Tensor:
        """Decode to per-patch predictions [b, n_tokens, patch_dim].

        The cls row rides through the decoder and is dropped from the output.
        """
        store = self.params
        cfg = self.cfg
        n_tokens = plans[0].n_tokens
        if any(p.n_tokens != n_tokens for p in plans):
            raise ValueError("plans disagree on token count")
        if enc_feats.shape[1] != 1 + plans[0].n_visible:
            raise ValueError("encoder features do not match the mask plans")

        h = enc_feats @ store["dec.embed.w"] + store["dec.embed.b"]
        cls_part = h[:, :1]
        vis_idx = np.stack([p.visible_idx for p in plans])
        full = scatter_tokens(h[:, 1:], vis_idx, n_tokens, store["mask_token"])
        pos = Tensor(grid_positions(*grid_shape, cfg.dec_dim))
        full = full + pos
        tok = concat([cls_part, full], axis=1)
        for i in range(cfg.dec_layers):
            tok = transformer_block(tok, store, f"dec.{i}", cfg.dec_heads)
        tok = tok.layer_norm(store["dec.norm.g"], store["dec.norm.b"])
        out = tok[:, 1:]
        return out @ store[f"head.{head}.w"] + store[f"head.{head}.b"]

    def reconstruct(self, patch_batch: np.ndarray, plans: list[MaskPlan], grid_shape) -> Tensor:
        """Pretraining path: gather visible rows, encode, decode all patches."""
        vis = np.stack([patch_batch[i][p.visible_idx] for i, p in enumerate(plans)])
        enc = self.encode(vis, plans, grid_shape)
        return self.decode_patches(enc, plans, grid_shape, head="recon")

    def se_patch_output(self, patch_batch: np.ndarray, plans, grid_shape) -> Tensor:
        enc = self.encode(np.asarray(patch_batch, dtype=self.dtype), plans, grid_shape)
        return self.decode_patches(enc, plans, grid_shape, head="se")

    # -- cls head -----------------------------------------------------------

    def classify(self, patch_batch: np.ndarray, plans, grid_shape) -> Tensor:
        """Logits [b, n_classes] from the encoder cls feature."""
        enc = self.encode(np.asarray(patch_batch, dtype=self.dtype), plans, grid_shape)
        cls_feat = enc[:, 0]
        return cls_feat @ self.params["head.cls.w"] + self.params["head.cls.b"]

    # -- frame decoder (istft variant) ---------------------------------------

    def frame_mask_logits(self, patch_batch, plans, grid_shape, noisy_mag_frames) -> Tensor:
        """Per-frame STFT mask logits [b, n_frames, n_freq].

        noisy_mag_frames: [b, n_frames, n_freq] with n_frames equal to
        PATCH * n_time_patches; encoder features are mean-pooled over the
        mel-patch rows of each time-patch column and repeated PATCH times
        along the frame axis.
        """
        store = self.params
        cfg = self.cfg
        n_mel_p, n_time_p = grid_shape
        mag = noisy_mag_frames if isinstance(noisy_mag_frames, Tensor) else Tensor(
            np.asarray(noisy_mag_frames, dtype=self.dtype)
        )
        b, n_frames, n_freq = mag.shape
        if n_freq != cfg.n_freq:
            raise ValueError(f"expected {cfg.n_freq} bins per frame, got {n_freq}")
        if n_frames != PATCH * n_time_p:
            raise ValueError(
                f"{n_frames} frames do not align with {n_time_p} time patches of {PATCH}"
            )

        enc = self.encode(np.asarray(patch_batch, dtype=self.dtype), plans, grid_shape)
        grid_feats = enc[:, 1:].reshape(b, n_mel_p, n_time_p, cfg.enc_dim)
        col_feats = grid_feats.mean(axis=1)
        frame_feats = col_feats.repeat_axis(PATCH, axis=1)

        m = mag @ store["fdec.mag.w"] + store["fdec.mag.b"]
        tok = concat([m, frame_feats], axis=2) @ store["fdec.fuse.w"] + store["fdec.fuse.b"]
        tok = tok + Tensor(frame_positions(n_frames, cfg.istft_dec_dim))
        for i in range(cfg.dec_layers):
            tok = transformer_block(tok, store, f"fdec.{i}", cfg.dec_heads)
        tok = tok.layer_norm(store["fdec.norm.g"], store["fdec.norm.b"])
        return tok @ store["head.mask.w"] + store["head.mask.b"]
