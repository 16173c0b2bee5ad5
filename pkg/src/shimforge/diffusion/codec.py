"""Identity codec: the latent is the image rescaled to [-1, 1], channels first."""

from __future__ import annotations

import numpy as np
import torch


def encode(images, dtype=torch.float64) -> torch.Tensor:
    """``(H, W, C)`` or ``(N, H, W, C)`` images in [0, 1] -> ``(N, C, H, W)`` latents."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    z = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
    return (z * 2.0 - 1.0).to(dtype)


def decode(latents: torch.Tensor) -> np.ndarray:
    """``(N, C, H, W)`` latents -> ``(N, H, W, C)`` float64 images clamped to [0, 1]."""
    z = latents.detach().to(torch.float64)
    img = ((z + 1.0) / 2.0).clamp(0.0, 1.0)
    return img.permute(0, 2, 3, 1).contiguous().numpy()
