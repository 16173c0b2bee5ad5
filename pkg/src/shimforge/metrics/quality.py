from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from shimforge.errors import ShapeError
from shimforge.signal import dct2

LUMA = np.array([0.299, 0.587, 0.114])
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    return img @ LUMA


def gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window: int = 7, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-contained Gaussian windows of the luminance planes."""
    a, b = _pair(a, b)
    x, y = gray(a), gray(b)
    if min(x.shape) < window:
        raise ShapeError(f"image {x.shape} smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)

    def filt(p):
        return convolve2d(p, w[::-1, ::-1], mode="valid")

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


def dct_features(images: np.ndarray, k: int = 8) -> np.ndarray:
    """Top-left ``k x k`` DCT coefficients of each image's luminance, flattened."""
    return np.stack([dct2(gray(img))[:k, :k].ravel() for img in images])


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    ``tr (S_a S_b)^(1/2)`` equals the sum of singular values of
    ``S_a^(1/2) S_b^(1/2)``, which stays accurate for rank-deficient covariances.
    """
    cross = np.linalg.svd(_psd_sqrt(cov_a) @ _psd_sqrt(cov_b), compute_uv=False).sum()
    diff = np.asarray(mu_a) - np.asarray(mu_b)
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * cross)


def frechet_dct(set_a: np.ndarray, set_b: np.ndarray, min_size: int = 32) -> float:
    """Frechet distance between Gaussian fits of DCT features.

    A stand-in for FID: absolute values are not comparable to Inception-based scores.
    """
    if len(set_a) < min_size or len(set_b) < min_size:
        raise ShapeError(f"each set needs >= {min_size} images, got {len(set_a)} and {len(set_b)}")
    fa, fb = dct_features(set_a), dct_features(set_b)
    return frechet_distance(fa.mean(0), np.cov(fa, rowvar=False), fb.mean(0), np.cov(fb, rowvar=False))
