"""DWT-DCT-SVD bit watermark.

Pipeline per colour plane: one Haar level, 4x4 blocks of the LL band, an
orthonormal DCT of each block, and the block's largest singular value
quantised onto an even/odd lattice (step = key strength). The key seed picks
which 32 of the available blocks carry bits.
"""

from __future__ import annotations

import numpy as np

from shimforge.errors import CapacityError, ShapeError
from shimforge.signal import block_partition, dct2, dwt2_haar, idct2, idwt2_haar, svd_block
from shimforge.watermark.keys import N_BITS, BitKey
from shimforge.watermark.result import Detection

BLOCK = 4


def _check(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected (H, W, C) image, got {img.shape}")
    if img.shape[0] % (2 * BLOCK) or img.shape[1] % (2 * BLOCK):
        raise ShapeError(f"image sides must be divisible by {2 * BLOCK}, got {img.shape[:2]}")
    return img


def _slots(image: np.ndarray, key: BitKey) -> list[tuple[int, int]]:
    """``(channel, block index)`` for each of the 32 bits."""
    h, w, c = image.shape
    part = block_partition((h // 2, w // 2), BLOCK)
    total = len(part) * c
    if total < N_BITS:
        raise CapacityError(f"{total} blocks available, {N_BITS} needed")
    order = key.carrier_rng().permutation(total)[:N_BITS]
    return [(int(i) // len(part), int(i) % len(part)) for i in order]


def _lattice_target(sigma: float, bit: int, step: float, floor: float) -> float:
    k = int(np.round(sigma / step))
    if k % 2 != bit:
        k += 1 if sigma / step > k else -1
    while k * step < floor or k < 0:
        k += 2
    return k * step


def _embed_once(img: np.ndarray, key: BitKey) -> np.ndarray:
    out = img.copy()
    part = block_partition((img.shape[0] // 2, img.shape[1] // 2), BLOCK)
    slots = _slots(img, key)
    for ch in range(img.shape[2]):
        mine = [(bit, b) for bit, (c, b) in zip(key.bits, slots) if c == ch]
        if not mine:
            continue
        ll, det = dwt2_haar(out[:, :, ch], 1)
        for bit, b in mine:
            blk = part.view(ll, b)
            u, s, v = svd_block(dct2(blk))
            s = s.copy()
            s[0] = _lattice_target(s[0], bit, key.strength, s[1] if len(s) > 1 else 0.0)
            blk[...] = idct2(u @ np.diag(s) @ v.T)
        out[:, :, ch] = idwt2_haar(ll, det)
    return out


def extract_blocksvd(image: np.ndarray, key: BitKey) -> np.ndarray:
    img = _check(image)
    part = block_partition((img.shape[0] // 2, img.shape[1] // 2), BLOCK)
    lls = [dwt2_haar(img[:, :, ch], 1)[0] for ch in range(img.shape[2])]
    bits = []
    for c, b in _slots(img, key):
        s = svd_block(dct2(part.view(lls[c], b)))[1]
        bits.append(int(np.round(s[0] / key.strength)) % 2)
    return np.array(bits, dtype=np.int64)


def embed_blocksvd(image: np.ndarray, key: BitKey, passes: int = 4) -> np.ndarray:
    """Embed ``key`` and clamp to [0, 1].

    Clamping can undo an embedded bit near saturated pixels, so the embed is
    repeated (up to ``passes`` times) until the clamped result decodes cleanly.
    """
    out = _check(image)
    for _ in range(passes):
        out = np.clip(_embed_once(out, key), 0.0, 1.0)
        if np.array_equal(extract_blocksvd(out, key), key.array):
            break
    return out


def detect_blocksvd(image: np.ndarray, key: BitKey) -> Detection:
    bits = extract_blocksvd(image, key)
    return Detection("blocksvd", float(np.mean(bits == key.array)), bits)
