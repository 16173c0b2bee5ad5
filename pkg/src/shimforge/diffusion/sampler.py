"""Deterministic DDIM sampling and fixed-point inversion over a trained denoiser."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from shimforge.diffusion.denoiser import Denoiser
from shimforge.diffusion.schedule import NoiseSchedule, SamplerGrid, make_schedule
from shimforge.errors import ConfigError, NumericError, ShapeError

log = logging.getLogger(__name__)


def forward_diffuse(schedule: NoiseSchedule, x0: torch.Tensor, t: int, noise: torch.Tensor) -> torch.Tensor:
    """Closed-form q(x_t | x_0) sample with caller-supplied standard normal noise."""
    t = schedule.check_t(t)
    if noise.shape != x0.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != latent shape {tuple(x0.shape)}")
    ab = float(schedule.alpha_bar[t])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


@dataclass
class LatentTrajectory:
    """Inverted anchors keyed by timestep; ``anchors[0]`` is the encoded image itself."""

    anchors: dict[int, torch.Tensor] = field(default_factory=dict)
    origin: str = ""

    @property
    def timesteps(self) -> list[int]:
        return sorted(self.anchors)

    def __getitem__(self, t: int) -> torch.Tensor:
        return self.anchors[t]

    @property
    def top(self) -> torch.Tensor:
        return self.anchors[max(self.anchors)]


class DiffusionModel:
    """A denoiser bound to a noise schedule, a sampler grid and a working dtype.

    Every network evaluation goes through :meth:`predict`, which increments
    :attr:`calls`. Conditioning defaults to the learned null context.
    """

    def __init__(
        self,
        denoiser: Denoiser,
        schedule: NoiseSchedule | None = None,
        num_steps: int = 50,
        dtype: torch.dtype = torch.float32,
        invert_tol: float | None = None,
        invert_max_iter: int = 50,
    ):
        self.schedule = schedule or make_schedule(denoiser.config.T)
        if self.schedule.T != denoiser.config.T:
            raise ConfigError(f"schedule T={self.schedule.T} differs from denoiser T={denoiser.config.T}")
        if not np.allclose(self.schedule.alpha_bar, denoiser.alpha_bar, rtol=0, atol=0):
            raise ConfigError("schedule differs from the one the denoiser converts its output with")
        self.grid = SamplerGrid(self.schedule.T, num_steps)
        self.dtype = dtype
        self.denoiser = copy.deepcopy(denoiser).to(dtype).eval()
        for p in self.denoiser.parameters():
            p.requires_grad_(False)
        self.invert_tol = invert_tol if invert_tol is not None else (1e-10 if dtype == torch.float64 else 1e-5)
        self.invert_max_iter = invert_max_iter
        self.calls = 0

    def with_dtype(self, dtype: torch.dtype) -> "DiffusionModel":
        return DiffusionModel(self.denoiser, self.schedule, self.grid.num_steps, dtype, None, self.invert_max_iter)

    @property
    def null_context(self) -> torch.Tensor:
        return self.denoiser.null_context.detach()

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        c = self.denoiser.config
        return (c.image_channels, c.image_size, c.image_size)

    def _cond(self, cond: torch.Tensor | None) -> torch.Tensor:
        return self.null_context if cond is None else cond.to(self.dtype)

    def predict(self, x: torch.Tensor, t: int, cond: torch.Tensor | None = None) -> torch.Tensor:
        """Noise prediction. Gradient tracking follows the ambient autograd mode."""
        self.calls += 1
        return self.denoiser(x.to(self.dtype), torch.tensor(int(t)), self._cond(cond))

    def alpha_bar(self, t: int) -> float:
        return float(self.schedule.alpha_bar[t])

    def coefficients(self, t: int) -> tuple[float, float]:
        """``(scale, zeta)`` with ``x_prev = scale * x_t - zeta * eps`` for the DDIM step at ``t``."""
        prev = self.grid.prev(t)
        ab_t, ab_p = self.alpha_bar(t), self.alpha_bar(prev)
        scale = math.sqrt(ab_p / ab_t)
        zeta = math.sqrt(ab_p) * math.sqrt(1.0 - ab_t) / math.sqrt(ab_t) - math.sqrt(1.0 - ab_p)
        return scale, zeta

    def ddim_update(self, x: torch.Tensor, t: int, eps: torch.Tensor) -> torch.Tensor:
        """The textbook form: predict x0, then re-noise to the previous grid point."""
        prev = self.grid.prev(t)
        ab_t, ab_p = self.alpha_bar(t), self.alpha_bar(prev)
        x0 = (x - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
        return math.sqrt(ab_p) * x0 + math.sqrt(1.0 - ab_p) * eps

    def sampler_step(self, x: torch.Tensor, t: int, cond: torch.Tensor | None = None) -> torch.Tensor:
        scale, zeta = self.coefficients(t)
        eps = self.predict(x, t, cond)
        return scale * x.to(self.dtype) - zeta * eps

    def invert_step(self, x_prev: torch.Tensor, t: int, cond: torch.Tensor | None = None) -> torch.Tensor:
        """Solve ``sampler_step(x_t, t) == x_prev`` for ``x_t``.

        Fixed-point iteration ``x <- (x_prev + zeta * eps(x)) / scale`` started
        from the naive DDIM inversion and accelerated with Anderson mixing.
        Stops per sample once the round-trip residual (max abs) is below
        ``invert_tol``.
        """
        scale, zeta = self.coefficients(t)
        x_prev = x_prev.to(self.dtype)
        b = x_prev.shape[0]

        def g(x):
            return (x_prev + zeta * self.predict(x, t, cond)) / scale

        with torch.no_grad():
            x = g(x_prev)
            gx = g(x)
            xs, fs = [x.reshape(b, -1)], [(gx - x).reshape(b, -1)]
            gs = [gx.reshape(b, -1)]
            done = torch.zeros(b, dtype=torch.bool)
            m = 4
            for it in range(self.invert_max_iter):
                resid = fs[-1].abs().amax(dim=1) * scale
                done = resid < self.invert_tol
                if bool(done.all()):
                    break
                if len(fs) > 1:
                    df = torch.stack([fs[i + 1] - fs[i] for i in range(len(fs) - 1)], dim=2)
                    dg = torch.stack([gs[i + 1] - gs[i] for i in range(len(gs) - 1)], dim=2)
                    gram = df.transpose(1, 2) @ df
                    # Finished samples stop moving, so their differences vanish; the
                    # absolute floor turns that degenerate system into gamma = 0.
                    reg = 1e-10 * gram.diagonal(dim1=1, dim2=2).mean(-1) + torch.finfo(gram.dtype).tiny
                    gram = gram + reg[:, None, None] * torch.eye(gram.shape[-1], dtype=gram.dtype)
                    rhs = df.transpose(1, 2) @ fs[-1].unsqueeze(2)
                    gamma = torch.zeros_like(rhs)
                    active = ~done
                    gamma[active] = torch.linalg.solve(gram[active], rhs[active])
                    x_new = gs[-1] - (dg @ gamma).squeeze(2)
                else:
                    x_new = gs[-1]
                x_new = torch.where(done[:, None], xs[-1], x_new)
                g_new = g(x_new.reshape(x_prev.shape)).reshape(b, -1)
                xs.append(x_new)
                gs.append(g_new)
                fs.append(g_new - x_new)
                xs, gs, fs = xs[-(m + 1) :], gs[-(m + 1) :], fs[-(m + 1) :]
            if not bool(done.all()):
                log.info(
                    "inversion at t=%d: %d of %d samples not converged (max residual %.2e)",
                    t, int((~done).sum()), b, float(resid.max()),
                )
            # Return the iterate whose residual was last measured.
            x = xs[-1].reshape(x_prev.shape)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite latent while inverting timestep {t}")
        return x

    def invert(
        self,
        x0: torch.Tensor,
        cond: torch.Tensor | None = None,
        upto: int | None = None,
        origin: str = "",
    ) -> LatentTrajectory:
        """Anchors for every grid point up to ``upto`` (default: the top of the grid)."""
        upto = self.grid.T if upto is None else self.grid.check(upto)
        traj = LatentTrajectory({0: x0.to(self.dtype).clone()}, origin)
        x = traj.anchors[0]
        for t in self.grid.timesteps:
            if t > upto:
                break
            x = self.invert_step(x, t, cond)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite anchor at timestep {t}")
            traj.anchors[t] = x
        return traj

    def generate(
        self,
        x_start: torch.Tensor,
        cond: torch.Tensor | None = None,
        start: int | None = None,
    ) -> torch.Tensor:
        """Run the sampler from grid point ``start`` (default ``T``) down to 0."""
        start = self.grid.T if start is None else start
        x = x_start.to(self.dtype)
        with torch.no_grad():
            for t in self.grid.descending_from(start):
                x = self.sampler_step(x, t, cond)
        if not torch.isfinite(x).all():
            raise NumericError("non-finite latent during generation")
        return x
