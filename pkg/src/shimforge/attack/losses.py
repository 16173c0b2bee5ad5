"""Shim losses. All functions take batched tensors and return one value per sample.

Shapes: shims and contexts are ``(B, L, d)`` (or ``(L, d)`` for the shared
null context); latents are ``(B, C, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from shimforge.errors import NumericError, ShapeError


def _batched(delta: torch.Tensor) -> torch.Tensor:
    return delta.unsqueeze(0) if delta.ndim == 2 else delta


def loss_norm(delta: torch.Tensor, eps_hat: float | torch.Tensor) -> torch.Tensor:
    """Hinge ``max(0, eps_hat - ||delta||_F)``."""
    norms = torch.linalg.vector_norm(_batched(delta).flatten(1), dim=1)
    return torch.clamp(torch.as_tensor(eps_hat, dtype=norms.dtype) - norms, min=0.0)


def loss_semantic(delta: torch.Tensor, null_context: torch.Tensor) -> torch.Tensor:
    """Negative cosine similarity between ``e`` and ``e + delta``, flattened."""
    d = _batched(delta)
    e = null_context.reshape(1, -1).to(d.dtype)
    shifted = e + d.flatten(1)
    denom = torch.linalg.vector_norm(e, dim=1) * torch.linalg.vector_norm(shifted, dim=1)
    if bool((denom == 0).any()):
        raise NumericError("cosine undefined: e + delta has zero norm")
    return -(shifted @ e.T).squeeze(1) / denom


def loss_align(x: torch.Tensor, anchor: torch.Tensor) -> torch.Tensor:
    """Mean squared difference per sample."""
    if x.shape != anchor.shape:
        raise ShapeError(f"latent shape {tuple(x.shape)} != anchor shape {tuple(anchor.shape)}")
    return (x - anchor.to(x.dtype)).pow(2).flatten(1).mean(dim=1)


@dataclass
class LossTerms:
    norm: torch.Tensor
    semantic: torch.Tensor
    align: torch.Tensor
    total: torch.Tensor


def loss_total(
    delta: torch.Tensor,
    null_context: torch.Tensor,
    x_prev: torch.Tensor,
    anchor_prev: torch.Tensor,
    eps_hat: float,
    gamma1: float,
    gamma2: float,
) -> LossTerms:
    ln = loss_norm(delta, eps_hat)
    ls = loss_semantic(delta, null_context)
    la = loss_align(x_prev, anchor_prev)
    return LossTerms(ln, ls, la, ln + gamma1 * ls + gamma2 * la)
