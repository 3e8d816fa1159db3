"""Writes an 8-patch fixture bag. Patches 0, 3 and 6 share one image."""

from __future__ import annotations

import argparse

import numpy as np

from .bagfile import read_bag, write_bag
from .features import embed_patches

SHARED = (0, 3, 6)


def make_fixture(size: int = 32, seed: int = 1) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    patches = rng.integers(0, 256, (8, size, size, 3), dtype=np.uint8)
    for k in SHARED[1:]:
        patches[k] = patches[SHARED[0]]
    coords = np.array([[(k % 4) * 256, (k // 4) * 256] for k in range(8)], dtype=np.uint32)
    return coords, embed_patches(patches, dim=16)


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    args = ap.parse_args(argv)
    coords, emb = make_fixture()
    write_bag(args.out, coords, emb)
    back_coords, back_emb = read_bag(args.out)
    assert (back_coords == coords).all() and (back_emb == emb).all()
    print(f"wrote {args.out}: {emb.shape[0]} x {emb.shape[1]}")


if __name__ == "__main__":
    main()
