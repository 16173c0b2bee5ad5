from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from importlib import resources
from pathlib import Path

from shimforge.errors import ArtifactIOError, ConfigError

START_MODES = ("inverse", "noisy")


@dataclass(frozen=True)
class AttackConfig:
    """Settings for one anchors-and-shims run.

    ``eps_hat`` may be a single margin or a ``{timestep: margin}`` mapping.
    Convergence: hinge satisfied and relative change of the total loss below
    ``tol`` for ``patience`` consecutive iterations, or ``max_iters``.
    """

    K: int = 140
    selected: tuple[int, ...] = (100, 60)
    start_mode: str = "noisy"
    gamma1: float = 1e5
    gamma2: float = 0.1
    eps_hat: float | dict = 10.0
    lr: float = 0.01
    weight_decay: float = 1e-3
    clip_norm: float = 1.0
    max_iters: int = 100
    tol: float = 1e-4
    patience: int = 5
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(sorted((int(t) for t in self.selected), reverse=True)))
        if self.start_mode not in START_MODES:
            raise ConfigError(f"start_mode must be one of {START_MODES}, got {self.start_mode!r}")
        if any(t > self.K or t < 1 for t in self.selected):
            raise ConfigError(f"selected timesteps {self.selected} must lie in [1, K={self.K}]")
        if min(self.gamma1, self.gamma2, self.lr, self.weight_decay, self.clip_norm) < 0:
            raise ConfigError("loss weights and optimizer settings must be non-negative")
        if self.max_iters < 0 or self.patience < 1:
            raise ConfigError("max_iters must be >= 0 and patience >= 1")
        if isinstance(self.eps_hat, dict):
            object.__setattr__(self, "eps_hat", {int(k): float(v) for k, v in self.eps_hat.items()})

    def margin(self, t: int) -> float:
        if isinstance(self.eps_hat, dict):
            if t not in self.eps_hat:
                raise ConfigError(f"no eps_hat for timestep {t}")
            return self.eps_hat[t]
        return float(self.eps_hat)

    def check_grid(self, grid) -> None:
        for t in (self.K, *self.selected):
            if t not in grid:
                raise ConfigError(f"timestep {t} is not on the sampler grid (stride {grid.stride})")

    def with_(self, **changes) -> "AttackConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selected"] = list(self.selected)
        if isinstance(self.eps_hat, dict):
            d["eps_hat"] = {str(k): v for k, v in self.eps_hat.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown attack config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = ("late-noisy", "early-inverse")


def preset(name: str) -> AttackConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("shimforge").joinpath("presets", f"{name}.json").read_text()
    return AttackConfig.from_dict(json.loads(text))


def load_config(path) -> AttackConfig:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ArtifactIOError(f"cannot read attack config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"attack config {path} is not valid JSON: {exc}") from exc
    return AttackConfig.from_dict(d)
