"""Orthonormal 2-D transforms shared by the watermark schemes and metrics.

Every transform here is unitary/orthonormal, so energy measured in any
domain is the same number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from shimforge.errors import InvalidInputError, ShapeError

__all__ = [
    "BlockPartition",
    "HaarLevel",
    "block_partition",
    "dct2",
    "dwt2_haar",
    "fft2",
    "idct2",
    "idwt2_haar",
    "ifft2",
    "svd_block",
]


def _plane(p, name="plane") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or min(p.shape) < 2:
        raise ShapeError(f"{name} must be 2-D with both sides >= 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return p


def fft2(plane) -> np.ndarray:
    """Unitary 2-D DFT (``norm='ortho'``), DC at index (0, 0)."""
    return np.fft.fft2(_plane(plane), norm="ortho")


def ifft2(spectrum) -> np.ndarray:
    """Inverse of :func:`fft2`. Returns the complex field; take ``.real`` for real input."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    if spectrum.ndim != 2:
        raise ShapeError(f"spectrum must be 2-D, got shape {spectrum.shape}")
    if not np.all(np.isfinite(spectrum)):
        raise InvalidInputError("spectrum contains non-finite values")
    return np.fft.ifft2(spectrum, norm="ortho")


def dct2(plane) -> np.ndarray:
    """Orthonormal type-II 2-D DCT."""
    return scipy.fft.dctn(_plane(plane), type=2, norm="ortho")


def idct2(coeffs) -> np.ndarray:
    return scipy.fft.idctn(_plane(coeffs, "coeffs"), type=2, norm="ortho")


@dataclass(frozen=True)
class HaarLevel:
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray


def _haar_once(p: np.ndarray):
    a = p[0::2, 0::2]
    b = p[0::2, 1::2]
    c = p[1::2, 0::2]
    d = p[1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a - b + c - d) / 2.0  # horizontal detail
    hl = (a + b - c - d) / 2.0  # vertical detail
    hh = (a - b - c + d) / 2.0
    return ll, HaarLevel(lh, hl, hh)


def _ihaar_once(ll: np.ndarray, det: HaarLevel) -> np.ndarray:
    h, w = ll.shape
    out = np.empty((2 * h, 2 * w))
    out[0::2, 0::2] = (ll + det.lh + det.hl + det.hh) / 2.0
    out[0::2, 1::2] = (ll - det.lh + det.hl - det.hh) / 2.0
    out[1::2, 0::2] = (ll + det.lh - det.hl - det.hh) / 2.0
    out[1::2, 1::2] = (ll - det.lh - det.hl + det.hh) / 2.0
    return out


def dwt2_haar(plane, levels: int = 1) -> tuple[np.ndarray, list[HaarLevel]]:
    """Orthonormal Haar pyramid.

    Returns the coarsest LL band and the detail bands ordered finest first.
    Dimensions must be divisible by ``2**levels``; there is no padding.
    """
    p = _plane(plane)
    if levels < 1:
        raise ShapeError("levels must be >= 1")
    step = 2**levels
    if p.shape[0] % step or p.shape[1] % step:
        raise ShapeError(f"shape {p.shape} not divisible by 2**{levels}")
    details = []
    ll = p
    for _ in range(levels):
        ll, det = _haar_once(ll)
        details.append(det)
    return ll, details


def idwt2_haar(ll, details: list[HaarLevel]) -> np.ndarray:
    out = np.asarray(ll, dtype=np.float64)
    for det in reversed(details):
        out = _ihaar_once(out, det)
    return out


def svd_block(block) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD returning ``(U, sigma, V)`` with ``block == U @ diag(sigma) @ V.T``.

    ``sigma`` is non-negative and non-increasing.
    """
    b = _plane(block, "block")
    u, s, vt = np.linalg.svd(b, full_matrices=False)
    return u, s, vt.T


@dataclass(frozen=True)
class BlockPartition:
    block_size: int
    blocks: tuple[tuple[int, int], ...]  # top-left corners, row-major

    def view(self, plane: np.ndarray, index: int) -> np.ndarray:
        r, c = self.blocks[index]
        return plane[r : r + self.block_size, c : c + self.block_size]

    def __len__(self) -> int:
        return len(self.blocks)


def block_partition(shape: tuple[int, int], block_size: int = 4) -> BlockPartition:
    """Non-overlapping tiles in row-major order; remainder rows/cols are dropped."""
    if block_size < 1:
        raise ShapeError("block_size must be positive")
    rows = shape[0] // block_size
    cols = shape[1] // block_size
    blocks = tuple((r * block_size, c * block_size) for r in range(rows) for c in range(cols))
    return BlockPartition(block_size, blocks)
