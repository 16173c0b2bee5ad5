"""Spread-spectrum bit watermark in the DCT of the luminance plane.

Each bit owns a disjoint, seed-chosen group of coefficients in a diagonal
frequency band and a seeded +-1 carrier over that group. Embedding adds
``strength * (+-1) * carrier`` per bit, so it is purely additive (embedding
the complemented key removes it). The luminance delta is added equally to
R, G and B, which changes luma by exactly that delta.
"""

from __future__ import annotations

import numpy as np

from shimforge.errors import CapacityError, ShapeError
from shimforge.signal import dct2, idct2
from shimforge.watermark.keys import N_BITS, BitKey
from shimforge.watermark.result import Detection

LUMA = np.array([0.299, 0.587, 0.114])
BAND = (16, 46)  # inclusive range of u + v


def luminance(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {img.shape}")
    return img @ LUMA


def _carriers(shape: tuple[int, int], key: BitKey, band=BAND) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficient rows, cols and signs, each shaped ``(32, m)``."""
    u, v = np.indices(shape)
    sel = np.flatnonzero(((u + v) >= band[0]) & ((u + v) <= band[1]))
    m = len(sel) // N_BITS
    if m < 1:
        raise CapacityError(f"band {band} holds {len(sel)} coefficients, need >= {N_BITS}")
    rng = key.carrier_rng()
    chosen = rng.permutation(sel)[: m * N_BITS].reshape(N_BITS, m)
    signs = rng.choice([-1.0, 1.0], size=(N_BITS, m))
    rows, cols = np.unravel_index(chosen, shape)
    return rows, cols, signs


def spread_delta(shape: tuple[int, int], key: BitKey) -> np.ndarray:
    rows, cols, signs = _carriers(shape, key)
    coeffs = np.zeros(shape)
    polarity = 2.0 * key.array[:, None] - 1.0
    coeffs[rows, cols] = key.strength * polarity * signs
    return idct2(coeffs)


def embed_spread(image: np.ndarray, key: BitKey) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    delta = spread_delta(luminance(img).shape, key)
    return np.clip(img + delta[:, :, None], 0.0, 1.0)


def correlations(image: np.ndarray, key: BitKey) -> np.ndarray:
    coeffs = dct2(luminance(image))
    rows, cols, signs = _carriers(coeffs.shape, key)
    return np.sum(coeffs[rows, cols] * signs, axis=1)


def detect_spread(image: np.ndarray, key: BitKey) -> Detection:
    bits = (correlations(image, key) > 0).astype(np.int64)
    return Detection("spread", float(np.mean(bits == key.array)), bits)
