"""Patch extraction for training and feathered stitching for tiled inference."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def tile_starts(size: int, tile: int, overlap: int):
    """Start offsets of tiles of length ``tile`` covering ``size`` with at least ``overlap`` shared."""
    if tile > size:
        raise ValueError(f"tile {tile} larger than image {size}")
    if tile == size:
        return [0]
    if not 0 <= overlap < tile:
        raise ValueError(f"overlap must be in [0, {tile}), got {overlap}")
    n = math.ceil((size - overlap) / (tile - overlap))
    n = max(n, 2)
    starts = np.linspace(0, size - tile, n)
    return [int(round(s)) for s in starts]


def tile_grid(shape, tile: int, overlap: int):
    rows = tile_starts(shape[0], tile, overlap)
    cols = tile_starts(shape[1], tile, overlap)
    return [(r, c) for r in rows for c in cols]


def _ramp(length, lead, trail):
    """Weights rising over ``lead`` samples and falling over the last ``trail`` samples."""
    w = np.ones(length)
    if lead:
        w[:lead] = (np.arange(lead) + 0.5) / lead
    if trail:
        w[length - trail:] = np.minimum(w[length - trail:], ((np.arange(trail) + 0.5) / trail)[::-1])
    return w


def stitch(tiles, positions, shape):
    """Blend tiles placed at top-left ``positions`` into an image of ``shape`` (H, W[, C]).

    Where tiles overlap, each contributes with a linear ramp across the
    overlapping band; pixels covered by one tile are copied verbatim.
    """
    if len(tiles) != len(positions):
        raise ValueError("tiles and positions differ in length")
    h, w = shape[:2]
    extra = tuple(shape[2:])
    acc = np.zeros((h, w) + extra)
    weight = np.zeros((h, w))
    count = np.zeros((h, w), dtype=int)
    spans = [(r, c, t.shape[0], t.shape[1]) for t, (r, c) in zip(tiles, positions)]
    for (r, c, th, tw) in spans:
        if r < 0 or c < 0 or r + th > h or c + tw > w:
            raise ValueError(f"tile at {(r, c)} of size {th}x{tw} exceeds {h}x{w}")
        count[r:r + th, c:c + tw] += 1
    if np.any(count == 0):
        raise ValueError("tiles leave part of the output uncovered")
    verbatim = np.zeros((h, w) + extra)
    for tile, (r, c, th, tw) in zip(tiles, spans):
        tile = np.asarray(tile, dtype=float)
        # overlap width on each side = extent shared with any other tile
        lead_r = max([min(r2 + h2, r + th) - r for (r2, c2, h2, w2) in spans
                      if r2 < r and c2 < c + tw and c2 + w2 > c] + [0])
        trail_r = max([r + th - max(r2, r) for (r2, c2, h2, w2) in spans
                       if r2 > r and r2 < r + th and c2 < c + tw and c2 + w2 > c] + [0])
        lead_c = max([min(c2 + w2, c + tw) - c for (r2, c2, h2, w2) in spans
                      if c2 < c and r2 < r + th and r2 + h2 > r] + [0])
        trail_c = max([c + tw - max(c2, c) for (r2, c2, h2, w2) in spans
                       if c2 > c and c2 < c + tw and r2 < r + th and r2 + h2 > r] + [0])
        wt = np.outer(_ramp(th, lead_r, trail_r), _ramp(tw, lead_c, trail_c))
        wt_b = wt.reshape(wt.shape + (1,) * len(extra))
        acc[r:r + th, c:c + tw] += wt_b * tile
        weight[r:r + th, c:c + tw] += wt
        single = count[r:r + th, c:c + tw] == 1
        verbatim[r:r + th, c:c + tw][single] = tile[single]
    blended = acc / weight.reshape(weight.shape + (1,) * len(extra))
    single = count == 1
    blended[single] = verbatim[single]
    return blended


def cut_tiles(image, tile: int, overlap: int):
    positions = tile_grid(image.shape, tile, overlap)
    return [image[r:r + tile, c:c + tile] for r, c in positions], positions


@dataclass
class PatchSet:
    inputs: np.ndarray  # (N, P, P)
    targets: np.ndarray  # (N, P, P, 3)
    positions: list
    dropped: int

    def __len__(self):
        return len(self.inputs)


def extract_patches(phase, color, patch: int = 256, overlap: float = 0.5, valid=None) -> PatchSet:
    """Regular grid of aligned training patches with stride patch * (1 - overlap).

    Patches touching pixels where ``valid`` is False are dropped.
    """
    phase = np.asarray(phase)
    color = np.asarray(color)
    if phase.shape[:2] != color.shape[:2]:
        raise ValueError(f"images not aligned: {phase.shape} vs {color.shape}")
    h, w = phase.shape[:2]
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} smaller than patch {patch}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must be in [0, 1)")
    stride = max(1, int(round(patch * (1 - overlap))))
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    inputs, targets, positions, dropped = [], [], [], 0
    for r in range(0, h - patch + 1, stride):
        for c in range(0, w - patch + 1, stride):
            if not valid[r:r + patch, c:c + patch].all():
                dropped += 1
                continue
            inputs.append(phase[r:r + patch, c:c + patch])
            targets.append(color[r:r + patch, c:c + patch])
            positions.append((r, c))
    empty_t = (0, patch, patch) + color.shape[2:]
    return PatchSet(np.array(inputs) if inputs else np.zeros((0, patch, patch)),
                    np.array(targets) if targets else np.zeros(empty_t), positions, dropped)
