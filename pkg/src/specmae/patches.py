"""16x16 patch grids over log-mel spectrograms and random mask plans.

Patch ordering is mel-patch-major, time-patch-minor (time fastest), i.e.
patch index p = mel_patch * n_time_patches + time_patch. Each patch row is
the 16x16 (mel, time) block flattened in C order. Positional embeddings in
the model use the same ordering.
"""

from dataclasses import dataclass

import numpy as np

PATCH = 16


@dataclass
class PatchGrid:
    """Flattened patch rows plus the grid geometry needed to invert them."""

    patches: np.ndarray  # [n_patches, PATCH*PATCH]
    n_mel_patches: int
    n_time_patches: int

    def __post_init__(self):
        expected = (self.n_mel_patches * self.n_time_patches, PATCH * PATCH)
        if self.patches.shape != expected:
            raise ValueError(f"patch matrix shape {self.patches.shape}, expected {expected}")

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]


@dataclass
class MaskPlan:
    """Partition of [0, n_tokens) into masked and visible indices."""

    n_tokens: int
    masked_idx: np.ndarray
    visible_idx: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.masked_idx = np.asarray(self.masked_idx, dtype=np.int64)
        self.visible_idx = np.asarray(self.visible_idx, dtype=np.int64)
        union = np.concatenate([self.masked_idx, self.visible_idx])
        if len(np.unique(union)) != self.n_tokens or (
            len(union) != self.n_tokens
        ):
            raise ValueError("masked and visible indices must partition [0, n_tokens)")

    @property
    def n_masked(self) -> int:
        return len(self.masked_idx)

    @property
    def n_visible(self) -> int:
        return len(self.visible_idx)

    def mask_vector(self) -> np.ndarray:
        """Boolean [n_tokens] vector, True at masked positions."""
        v = np.zeros(self.n_tokens, dtype=bool)
        v[self.masked_idx] = True
        return v


def patchify(values: np.ndarray) -> PatchGrid:
    """Rearrange a [n_mels, n_frames] matrix into 16x16 patch rows.

    Both dimensions must already be divisible by 16; padding is the
    caller's job.
    """
    values = np.asarray(values)
    n_mels, n_frames = values.shape
    if n_mels % PATCH or n_frames % PATCH:
        raise ValueError(f"dims {values.shape} not divisible by {PATCH}; pad first")
    mp, tp = n_mels // PATCH, n_frames // PATCH
    blocks = values.reshape(mp, PATCH, tp, PATCH).transpose(0, 2, 1, 3)
    return PatchGrid(blocks.reshape(mp * tp, PATCH * PATCH), mp, tp)


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Exact inverse of patchify."""
    mp, tp = grid.n_mel_patches, grid.n_time_patches
    blocks = grid.patches.reshape(mp, tp, PATCH, PATCH).transpose(0, 2, 1, 3)
    return blocks.reshape(mp * PATCH, tp * PATCH)


def unpatchify_values(patches: np.ndarray, n_mel_patches: int, n_time_patches: int) -> np.ndarray:
    """unpatchify for a raw [n_patches, 256] matrix (e.g. model output)."""
    return unpatchify(PatchGrid(np.asarray(patches), n_mel_patches, n_time_patches))


def patchify_batch(values: np.ndarray) -> np.ndarray:
    """Vectorized patchify for a [batch, n_mels, n_frames] stack."""
    b, n_mels, n_frames = values.shape
    if n_mels % PATCH or n_frames % PATCH:
        raise ValueError(f"dims {values.shape[1:]} not divisible by {PATCH}; pad first")
    mp, tp = n_mels // PATCH, n_frames // PATCH
    blocks = values.reshape(b, mp, PATCH, tp, PATCH).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(b, mp * tp, PATCH * PATCH)


def unpatchify_batch(patches: np.ndarray, n_mel_patches: int, n_time_patches: int) -> np.ndarray:
    """Inverse of patchify_batch."""
    b = patches.shape[0]
    blocks = patches.reshape(b, n_mel_patches, n_time_patches, PATCH, PATCH)
    blocks = blocks.transpose(0, 1, 3, 2, 4)
    return blocks.reshape(b, n_mel_patches * PATCH, n_time_patches * PATCH)


def sample_mask(n_tokens: int, ratio: float, seed) -> MaskPlan:
    """Uniform random mask plan without replacement, reproducible from seed.

    The masked count is round-half-up(ratio * n_tokens).
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    n_masked = int(np.floor(ratio * n_tokens + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_tokens)
    return MaskPlan(
        n_tokens=n_tokens,
        masked_idx=np.sort(perm[:n_masked]),
        visible_idx=np.sort(perm[n_masked:]),
        seed=seed if isinstance(seed, int) else None,
    )


def full_visible_plan(n_tokens: int) -> MaskPlan:
    """Ratio-0 plan (all tokens visible), used at fine-tune time."""
    return MaskPlan(n_tokens, np.empty(0, dtype=np.int64), np.arange(n_tokens))


def gather_visible(grid: PatchGrid, plan: MaskPlan) -> np.ndarray:
    """Rows of the grid at the plan's visible indices, ascending."""
    if plan.n_tokens != grid.n_patches:
        raise ValueError(f"plan covers {plan.n_tokens} tokens, grid has {grid.n_patches}")
    if plan.n_visible and plan.visible_idx.max() >= grid.n_patches:
        raise ValueError("visible index out of range")
    return grid.patches[plan.visible_idx]


def scatter_with_mask_tokens(
    visible_feats: np.ndarray, plan: MaskPlan, mask_token: np.ndarray
) -> np.ndarray:
    """Re-expand visible features to the full token sequence.

    Output row i is the corresponding visible feature when i is visible and
    mask_token otherwise. Positional information is added downstream.
    """
    visible_feats = np.asarray(visible_feats)
    mask_token = np.asarray(mask_token)
    if visible_feats.shape[0] != plan.n_visible:
        raise ValueError(
            f"{visible_feats.shape[0]} feature rows for {plan.n_visible} visible tokens"
        )
    if visible_feats.size and visible_feats.shape[1] != mask_token.shape[-1]:
        raise ValueError("mask token width does not match features")
    out = np.tile(mask_token.reshape(1, -1), (plan.n_tokens, 1)).astype(
        visible_feats.dtype if visible_feats.size else mask_token.dtype
    )
    out[plan.visible_idx] = visible_feats
    return out
