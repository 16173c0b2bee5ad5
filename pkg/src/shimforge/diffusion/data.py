"""Procedural 32x32 scenes: a linear-gradient background with 2-4 soft-edged
rectangles or ellipses. Colours stay inside [0.1, 0.9] so embedders have
headroom before clamping.
"""

from __future__ import annotations

import numpy as np


def _soft(sdf: np.ndarray, width: float) -> np.ndarray:
    # coverage from a signed distance (negative inside)
    return 1.0 / (1.0 + np.exp(sdf / width))


def procedural_image(rng: np.random.Generator, size: int = 32, edge_width: float = 0.6) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * (xx - size / 2) + np.sin(angle) * (yy - size / 2)) / size + 0.5
    c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3))
    img = c0 + (c1 - c0) * np.clip(ramp, 0, 1)[..., None]
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.1, 0.9, size=3)
        cx, cy = rng.uniform(4, size - 4, size=2)
        rx, ry = rng.uniform(3, size / 3, size=2)
        if rng.random() < 0.5:
            dx = np.abs(xx - cx) - rx
            dy = np.abs(yy - cy) - ry
            sdf = np.maximum(dx, dy)
        else:
            r = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
            sdf = (r - 1.0) * min(rx, ry)
        alpha = _soft(sdf, edge_width)[..., None]
        img = img * (1 - alpha) + color * alpha
    return np.clip(img, 0.0, 1.0)


def procedural_dataset(n: int, seed: int, size: int = 32) -> np.ndarray:
    """``(n, size, size, 3)`` float64 images, one child stream per image."""
    children = np.random.SeedSequence(seed).spawn(n)
    out = np.empty((n, size, size, 3))
    for i, ss in enumerate(children):
        out[i] = procedural_image(np.random.default_rng(ss), size)
    return out


def quantize8(images: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid (what a PNG round trip does)."""
    return np.round(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
