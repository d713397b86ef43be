"""Synthetic 8-bit covers: smooth shading, a few hard-edged shapes, mild noise.

Real photographs are not shipped; these stand in for them at toy scale and
give prediction-based RDH a realistic amount of spatial correlation.
"""

from __future__ import annotations

import numpy as np


def synthetic_cover(rng: np.random.Generator, side: int, channels: int = 1,
                    saturate: float = 0.0, noise: float = 2.0) -> np.ndarray:
    """One cover [C, side, side], int64 in [0, 255].

    ``saturate`` is the fraction of pixels forced to 0 or 255 (in blobs),
    for stress-testing overflow handling.
    """
    yy, xx = np.mgrid[0:side, 0:side] / side
    img = np.zeros((channels, side, side))
    for c in range(channels):
        base = rng.uniform(60, 190)
        layer = np.full((side, side), base)
        for _ in range(3):
            fx, fy = rng.uniform(0.3, 2.5, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            layer += rng.uniform(10, 40) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        for _ in range(int(rng.integers(1, 4))):
            y0, x0 = rng.integers(0, side, size=2)
            hh, ww = rng.integers(side // 8 + 1, side // 2 + 1, size=2)
            layer[y0 : y0 + hh, x0 : x0 + ww] += rng.uniform(-60, 60)
        layer += rng.normal(0, noise, size=(side, side))
        img[c] = layer
    img = np.clip(np.round(img), 0, 255).astype(np.int64)
    if saturate > 0:
        img = _saturate(img, rng, saturate)
    return img


def _saturate(img: np.ndarray, rng: np.random.Generator, frac: float) -> np.ndarray:
    c, h, w = img.shape
    target = int(np.ceil(frac * img.size))
    out = img.copy()
    mask = np.zeros(img.shape, dtype=bool)
    while mask.sum() < target:
        ch = rng.integers(0, c)
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        r = rng.integers(2, max(3, h // 4))
        yy, xx = np.ogrid[0:h, 0:w]
        blob = (yy - y0) ** 2 + (xx - x0) ** 2 <= r * r
        out[ch][blob] = 255 if rng.random() < 0.5 else 0
        mask[ch] |= blob
    return out


def cover_set(seed: int, n: int, side: int, channels: int = 1, **kw) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([synthetic_cover(rng, side, channels, **kw) for _ in range(n)])


def random_bits(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n).astype(np.uint8)
