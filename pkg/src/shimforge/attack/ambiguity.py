"""Ambiguity attacks: replace a bit watermark, or add a second Tree-Ring key."""

from __future__ import annotations

import numpy as np
import torch

from shimforge.attack.config import AttackConfig
from shimforge.attack.pipeline import AttackResult, run_attack
from shimforge.diffusion.codec import decode, encode
from shimforge.diffusion.sampler import DiffusionModel
from shimforge.errors import ConfigError
from shimforge.watermark import EMBEDDERS, BitKey, TreeRingKey, inject


def ambiguity_replace(
    model: DiffusionModel,
    images: np.ndarray,
    config: AttackConfig,
    new_key: BitKey,
    attacked: AttackResult | None = None,
) -> np.ndarray:
    """Strip the existing watermark with the shim attack, then embed ``new_key``.

    Pass ``attacked`` to reuse an attack already run on ``images``.
    """
    if attacked is None:
        attacked = run_attack(model, images, config)
    embed = EMBEDDERS[new_key.scheme]
    return np.stack([embed(img, new_key) for img in attacked.images])


def ambiguity_coexist(
    model: DiffusionModel,
    images: np.ndarray,
    new_key: TreeRingKey,
    avoid_channel: int | None = None,
) -> np.ndarray:
    """Invert to the initial latent, write ``new_key`` rings on its channel, regenerate.

    ``avoid_channel`` is the channel believed to hold the existing watermark.
    """
    if avoid_channel is not None and new_key.channel == avoid_channel:
        raise ConfigError(f"new key channel {new_key.channel} collides with the existing watermark channel")
    x_T = model.invert(encode(images, dtype=model.dtype)).top.to(torch.float64).numpy()
    marked = np.stack([inject(z, new_key)[0] for z in x_T])
    return decode(model.generate(torch.from_numpy(marked)))
