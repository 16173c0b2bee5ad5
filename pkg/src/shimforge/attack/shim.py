"""Per-timestep shim search.

A shim is a perturbation of the null context fed to the denoiser at one
selected timestep. Its objective only ever looks one sampler step ahead: the
current latent is detached, the perturbed step is taken once, and the loss
compares the result with the stored anchor. Memory per iteration therefore
does not depend on how many timesteps the trajectory has.

Shims for a batch of images are optimised together, each with its own
moments, clipping and stopping state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from shimforge.attack.config import AttackConfig
from shimforge.attack.losses import LossTerms, loss_total
from shimforge.diffusion.sampler import DiffusionModel
from shimforge.errors import NumericError

BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class Shim:
    """Shim tensors ``(B, L, d)`` with AdamW moments and per-sample step counts."""

    t: int
    delta: torch.Tensor
    exp_avg: torch.Tensor
    exp_avg_sq: torch.Tensor
    steps: torch.Tensor

    @classmethod
    def zeros(cls, t: int, batch: int, like: torch.Tensor) -> "Shim":
        z = torch.zeros((batch, *like.shape), dtype=like.dtype)
        return cls(t, z, z.clone(), z.clone(), torch.zeros(batch, dtype=torch.long))


def shim_objective(
    model: DiffusionModel,
    t: int,
    delta: torch.Tensor,
    x_t: torch.Tensor,
    anchor_prev: torch.Tensor,
    config: AttackConfig,
) -> tuple[LossTerms, torch.Tensor]:
    """One perturbed sampler step and its losses (exactly one denoiser call)."""
    e = model.null_context
    x_prev = model.sampler_step(x_t.detach(), t, e + delta)
    terms = loss_total(delta, e, x_prev, anchor_prev, config.margin(t), config.gamma1, config.gamma2)
    return terms, x_prev


def shim_gradient(
    model: DiffusionModel,
    t: int,
    delta: torch.Tensor,
    x_t: torch.Tensor,
    anchor_prev: torch.Tensor,
    config: AttackConfig,
) -> tuple[torch.Tensor, LossTerms, torch.Tensor]:
    """Exact gradient of each sample's total loss w.r.t. its own shim.

    Returns ``(grad, terms, x_prev)``; ``grad`` has the shape of ``delta``.
    """
    d = delta.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        terms, x_prev = shim_objective(model, t, d, x_t, anchor_prev, config)
        (grad,) = torch.autograd.grad(terms.total.sum(), d)
    if not torch.isfinite(grad).all():
        raise NumericError(f"non-finite shim gradient at timestep {t}")
    return grad, _detach(terms), x_prev.detach()


def _detach(terms: LossTerms) -> LossTerms:
    return LossTerms(*(v.detach() for v in (terms.norm, terms.semantic, terms.align, terms.total)))


def adamw_update(shim: Shim, grad: torch.Tensor, active: torch.Tensor, config: AttackConfig) -> None:
    """Clip each sample's gradient to ``clip_norm``, then one decoupled-decay Adam step.

    Inactive samples are left untouched.
    """
    b1, b2 = BETAS
    g = grad.clone()
    if config.clip_norm > 0:
        norms = torch.linalg.vector_norm(g.flatten(1), dim=1)
        factor = torch.clamp(config.clip_norm / (norms + 1e-6), max=1.0)
        g = g * factor[:, None, None]
    mask = active[:, None, None].to(g.dtype)
    steps = shim.steps + active.long()
    shim.exp_avg = torch.where(mask.bool(), b1 * shim.exp_avg + (1 - b1) * g, shim.exp_avg)
    shim.exp_avg_sq = torch.where(mask.bool(), b2 * shim.exp_avg_sq + (1 - b2) * g * g, shim.exp_avg_sq)
    k = steps.clamp(min=1).to(g.dtype)[:, None, None]
    bc1 = 1 - b1**k
    bc2 = 1 - b2**k
    denom = (shim.exp_avg_sq / bc2).sqrt() + ADAM_EPS
    new = shim.delta * (1 - config.lr * config.weight_decay) - config.lr * (shim.exp_avg / bc1) / denom
    shim.delta = torch.where(mask.bool(), new, shim.delta)
    shim.steps = steps


@dataclass
class ShimTrace:
    """Per-iteration losses, each row ``(iteration, sample, norm, semantic, align, total, ||delta||)``."""

    t: int
    rows: list[tuple] = field(default_factory=list)
    iterations: int = 0
    calls: int = 0

    def totals(self, sample: int = 0) -> list[float]:
        return [r[5] for r in self.rows if r[1] == sample]


def optimize_shim(
    model: DiffusionModel,
    t: int,
    x_t: torch.Tensor,
    anchor_prev: torch.Tensor,
    config: AttackConfig,
    on_iter=None,
) -> tuple[torch.Tensor, torch.Tensor, ShimTrace]:
    """Search shims at timestep ``t`` for every sample in the batch.

    Each iteration takes the perturbed step once, records the losses, checks
    convergence, and only then updates the shim, so the returned
    ``x_prev`` is exactly the step produced by the returned shim. With
    ``max_iters == 0`` the result is the unperturbed step.

    ``on_iter(iteration, x_prev)`` is called after every forward (for
    iterate dumps).
    """
    batch = x_t.shape[0]
    x_t = x_t.detach().to(model.dtype)
    trace = ShimTrace(t)
    shim = Shim.zeros(t, batch, model.null_context)
    if config.max_iters == 0:
        with torch.no_grad():
            return shim.delta, model.sampler_step(x_t, t), trace

    active = torch.ones(batch, dtype=torch.bool)
    best_delta = shim.delta.clone()
    best_x = torch.empty_like(x_t)
    history: list[torch.Tensor] = []
    streak = torch.zeros(batch, dtype=torch.long)
    for it in range(config.max_iters):
        calls_before = model.calls
        grad, terms, x_prev = shim_gradient(model, t, shim.delta, x_t, anchor_prev, config)
        trace.calls += model.calls - calls_before
        trace.iterations += 1
        if not torch.isfinite(terms.total).all():
            raise NumericError(f"non-finite shim loss at timestep {t}, iteration {it}")
        norms = torch.linalg.vector_norm(shim.delta.flatten(1), dim=1)
        for i in torch.nonzero(active).flatten().tolist():
            trace.rows.append(
                (it, i, float(terms.norm[i]), float(terms.semantic[i]), float(terms.align[i]),
                 float(terms.total[i]), float(norms[i]))
            )
        best_delta = torch.where(active[:, None, None], shim.delta, best_delta)
        best_x = torch.where(active[:, None, None, None], x_prev, best_x)
        if on_iter is not None:
            on_iter(it, best_x)

        if history:
            prev = history[-1]
            rel = (terms.total - prev).abs() / prev.abs().clamp(min=1e-12)
            calm = (rel < config.tol) & (terms.norm == 0)
            streak = torch.where(calm, streak + 1, torch.zeros_like(streak))
        history.append(terms.total)
        active = active & (streak < config.patience)
        if not bool(active.any()) or it == config.max_iters - 1:
            break
        adamw_update(shim, grad, active, config)
    return best_delta, best_x, trace


def step_memory_bytes(model: DiffusionModel, t: int, delta, x_t, anchor_prev, config: AttackConfig) -> int:
    """Bytes of tensors autograd saves for one shim gradient evaluation."""
    total = 0

    def pack(tensor):
        nonlocal total
        total += tensor.numel() * tensor.element_size()
        return tensor

    with torch.autograd.graph.saved_tensors_hooks(pack, lambda x: x):
        shim_gradient(model, t, delta, x_t, anchor_prev, config)
    return total


def hinge_satisfied(delta: torch.Tensor, eps_hat: float) -> torch.Tensor:
    return torch.linalg.vector_norm(delta.flatten(1), dim=1) >= eps_hat - 1e-9 * math.sqrt(delta[0].numel())
