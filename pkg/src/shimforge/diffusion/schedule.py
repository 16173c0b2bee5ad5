from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from shimforge.errors import ConfigError, GridError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule. Arrays are indexed by timestep with ``alpha_bar[0] == 1``."""

    T: int
    beta_start: float = 1e-4
    beta_end: float = 0.02
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bar: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError(f"T must be >= 2, got {self.T}")
        betas = np.concatenate([[0.0], np.linspace(self.beta_start, self.beta_end, self.T)])
        alpha_bar = np.cumprod(1.0 - betas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside [1, {self.T}]")
        return t


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    return NoiseSchedule(T, beta_start, beta_end)


@dataclass(frozen=True)
class SamplerGrid:
    """Uniform sampler grid ``T/n, 2T/n, ..., T``; the step below the first point lands on 0."""

    T: int
    num_steps: int = 50

    def __post_init__(self):
        if self.num_steps < 1 or self.T % self.num_steps:
            raise ConfigError(f"num_steps={self.num_steps} must divide T={self.T}")

    @property
    def stride(self) -> int:
        return self.T // self.num_steps

    @property
    def timesteps(self) -> list[int]:
        """Ascending grid points."""
        return list(range(self.stride, self.T + 1, self.stride))

    def __contains__(self, t) -> bool:
        return 1 <= t <= self.T and t % self.stride == 0

    def check(self, t: int) -> int:
        if t not in self:
            raise GridError(f"timestep {t} is not on the {self.num_steps}-step grid (stride {self.stride})")
        return int(t)

    def prev(self, t: int) -> int:
        return self.check(t) - self.stride

    def next(self, t: int) -> int:
        t = int(t)
        if t != 0:
            self.check(t)
        if t + self.stride > self.T:
            raise GridError(f"no grid point above {t}")
        return t + self.stride

    def descending_from(self, k: int) -> list[int]:
        self.check(k)
        return list(range(k, 0, -self.stride))
