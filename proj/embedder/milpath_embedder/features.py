"""Deterministic stand-in featurizer.

Maps each RGB patch to a fixed-width vector through a seeded random
projection of block-pooled pixels. Identical patches give identical rows.
"""

from __future__ import annotations

import numpy as np


def embed_patches(patches: np.ndarray, dim: int = 64, pool: int = 8, seed: int = 0) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 4 or patches.shape[-1] != 3:
        raise ValueError("patches must be N x H x W x 3")
    n, h, w, _ = patches.shape
    if h % pool or w % pool:
        raise ValueError("patch size must be a multiple of pool")
    pooled = patches.reshape(n, h // pool, pool, w // pool, pool, 3).mean(axis=(2, 4))
    flat = pooled.reshape(n, -1) / 255.0
    proj = np.random.default_rng(seed).standard_normal((flat.shape[1], dim)) / np.sqrt(flat.shape[1])
    return (flat @ proj).astype(np.float32)
