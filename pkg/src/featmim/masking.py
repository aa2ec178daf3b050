"""Block-wise random patch masks.

Whole blocks of patches are masked together. The number of masked blocks is
round-half-up(mask_ratio * total_blocks); blocks are drawn uniformly without
replacement from a SplitMix64 stream, so a (spec, seed) pair reproduces the
same mask on every platform.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMaskError
from .tensor import write_tvec

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 PRNG: 64-bit counter state, fixed multiplicative mixing."""

    def __init__(self, seed):
        self.state = seed & _MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n):
        """Uniform integer in [0, n) by modulo reduction (documented rule)."""
        return self.next_u64() % n


@dataclass(frozen=True)
class MaskSpec:
    image_side: int
    patch_side: int
    block_side: int
    mask_ratio: float
    seed: int

    def validate(self):
        if self.patch_side < 1 or self.block_side < 1 or self.image_side < 1:
            raise ConfigError("mask geometry extents must be positive")
        if self.block_side % self.patch_side != 0:
            raise ConfigError(
                f"block_side {self.block_side} must be a multiple of patch_side {self.patch_side}")
        if self.image_side % self.block_side != 0:
            raise ConfigError(
                f"image_side {self.image_side} must be a multiple of block_side {self.block_side}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")

    @property
    def grid_side(self):
        return self.image_side // self.patch_side

    @property
    def n_patches(self):
        return self.grid_side * self.grid_side

    @property
    def blocks_per_side(self):
        return self.image_side // self.block_side

    @property
    def n_blocks(self):
        return self.blocks_per_side * self.blocks_per_side

    @property
    def patches_per_block_side(self):
        return self.block_side // self.patch_side


@dataclass(frozen=True)
class PatchMask:
    grid: np.ndarray  # bool [grid_side, grid_side], True = masked
    masked_idx: np.ndarray  # sorted int64
    visible_idx: np.ndarray  # sorted int64

    @property
    def n_patches(self):
        return self.grid.size

    @property
    def grid_side(self):
        return self.grid.shape[0]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def generate_mask(spec: MaskSpec) -> PatchMask:
    """Sample a block-wise mask; deterministic for a given (spec, seed)."""
    spec.validate()
    n_blocks = spec.n_blocks
    n_masked_blocks = _round_half_up(spec.mask_ratio * n_blocks)
    if n_masked_blocks >= n_blocks:
        raise DegenerateMaskError(
            f"mask_ratio {spec.mask_ratio} rounds to all {n_blocks} blocks masked; "
            "the encoder needs at least one visible token")

    # Partial Fisher-Yates over block indices, driven by SplitMix64.
    rng = SplitMix64(spec.seed)
    order = list(range(n_blocks))
    for i in range(n_blocks - 1, 0, -1):
        j = rng.next_below(i + 1)
        order[i], order[j] = order[j], order[i]
    chosen = order[:n_masked_blocks]

    g = spec.grid_side
    bpp = spec.patches_per_block_side
    grid = np.zeros((g, g), dtype=bool)
    for b in chosen:
        br, bc = divmod(b, spec.blocks_per_side)
        grid[br * bpp:(br + 1) * bpp, bc * bpp:(bc + 1) * bpp] = True

    flat = grid.reshape(-1)
    masked = np.flatnonzero(flat).astype(np.int64)
    visible = np.flatnonzero(~flat).astype(np.int64)
    if len(visible) == 0:
        raise DegenerateMaskError("mask left no visible patches")
    return PatchMask(grid=grid, masked_idx=masked, visible_idx=visible)


def mask_ratio_actual(mask: PatchMask) -> float:
    return len(mask.masked_idx) / mask.n_patches


def export_mask(mask: PatchMask, path):
    """Debug dump: the patch grid as 0/1 floats in the tensor file format."""
    write_tvec(path, mask.grid.astype(np.float32))
