"""Deterministic synthetic images for tests and desk-scale experiments."""

import numpy as np

from .teacher import bilinear_resize


def synthetic_image(side, channels=3, seed=0, dtype=np.float32):
    """Smooth random field in [0, 1]: coarse noise upsampled bilinearly."""
    rng = np.random.default_rng(seed)
    coarse_side = max(side // 4, 2)
    coarse = rng.random((channels, coarse_side, coarse_side))
    img = bilinear_resize(coarse, side, side) if coarse_side != side else coarse
    return np.clip(img, 0.0, 1.0).astype(dtype)
