"""Tree-Ring style watermark written into the Fourier plane of the initial latent.

Rings are annuli ``round(|k|) == r`` in the centred unitary spectrum of one
latent channel. Each ring carries one complex constant on the upper half
plane and its conjugate on the mirrored bins, so the spatial latent stays
real. Detection inverts an image back to its initial latent and scores the
negative mean L1 distance between the masked bins and the key targets.
"""

from __future__ import annotations

import numpy as np
import torch

from shimforge.diffusion.codec import decode, encode
from shimforge.diffusion.sampler import DiffusionModel
from shimforge.signal import fft2, ifft2
from shimforge.watermark.keys import TreeRingKey
from shimforge.watermark.result import Detection


def ring_mask(key: TreeRingKey) -> tuple[np.ndarray, np.ndarray]:
    """``(mask, targets)``: boolean bin mask and the complex target value per bin."""
    n = key.size
    f = np.fft.fftfreq(n, d=1.0 / n)
    fy, fx = np.meshgrid(f, f, indexing="ij")
    dist = np.rint(np.hypot(fy, fx)).astype(int)
    upper = (fy > 0) | ((fy == 0) & (fx > 0))
    mask = np.zeros((n, n), dtype=bool)
    targets = np.zeros((n, n), dtype=np.complex128)
    for r, c in zip(key.radii, key.targets):
        ring = dist == r
        mask |= ring
        targets[ring & upper] = c
        targets[ring & ~upper] = np.conj(c)
    return mask, targets


def inject(latent: np.ndarray, key: TreeRingKey) -> tuple[np.ndarray, float]:
    """Overwrite the ring bins of ``latent[key.channel]`` (``(C, H, W)``).

    Returns the new latent and the largest imaginary residue dropped when
    returning to the spatial domain.
    """
    mask, targets = ring_mask(key)
    out = np.array(latent, dtype=np.float64, copy=True)
    spec = fft2(out[key.channel])
    spec[mask] = targets[mask]
    spatial = ifft2(spec)
    out[key.channel] = spatial.real
    return out, float(np.abs(spatial.imag).max())


def ring_distance(latent: np.ndarray, key: TreeRingKey) -> float:
    mask, targets = ring_mask(key)
    spec = fft2(np.asarray(latent, dtype=np.float64)[key.channel])
    return float(np.mean(np.abs(spec[mask] - targets[mask])))


def treering_generate(
    key: TreeRingKey, model: DiffusionModel, seeds: list[int] | int
) -> tuple[np.ndarray, np.ndarray]:
    """Generate watermarked images, one per seed.

    Returns ``(images (N, H, W, C), watermarked initial latents (N, C, H, W))``.
    """
    seeds = [seeds] if isinstance(seeds, int) else list(seeds)
    shape = model.latent_shape
    latents = []
    for s in seeds:
        x_t = np.random.default_rng(s).standard_normal(shape)
        latents.append(inject(x_t, key)[0])
    x_T = np.stack(latents)
    x0 = model.generate(torch.from_numpy(x_T))
    return decode(x0), x_T


def invert_to_noise(images: np.ndarray, model: DiffusionModel) -> np.ndarray:
    z = encode(images, dtype=model.dtype)
    return model.invert(z).top.to(torch.float64).numpy()


def treering_detect(images: np.ndarray, key: TreeRingKey, model: DiffusionModel) -> list[Detection]:
    return score_latents(invert_to_noise(images, model), key)


def score_latents(latents: np.ndarray, key: TreeRingKey) -> list[Detection]:
    return [Detection("treering", -ring_distance(z, key)) for z in latents]
