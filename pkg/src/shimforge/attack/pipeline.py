"""The full attack: invert to anchors, start at K, shim the selected timesteps,
plain unconditional steps everywhere else. Regen and Rinse share the start
latent construction so a noisy-start attack and Regen with the same seed
begin from the identical latent.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from shimforge.attack.config import AttackConfig
from shimforge.attack.shim import ShimTrace, optimize_shim
from shimforge.diffusion.codec import decode, encode
from shimforge.diffusion.sampler import DiffusionModel, forward_diffuse
from shimforge.errors import ConfigError

TRACE_HEADER = ("iteration", "t", "sample", "L_norm", "L_semantic", "L_align", "L_total", "delta_norm")


def start_noise(seed: int, shape: tuple[int, ...], round_index: int = 0) -> torch.Tensor:
    """Standard normal noise for a noisy start; round 0 is shared by attack and Regen."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(round_index,)) if round_index else np.random.SeedSequence(int(seed))
    return torch.from_numpy(np.random.default_rng(ss).standard_normal(shape))


@dataclass
class AttackResult:
    images: np.ndarray
    traces: list[ShimTrace] = field(default_factory=list)
    delta_norms: dict[int, np.ndarray] = field(default_factory=dict)
    calls: int = 0
    shim_calls: int = 0
    wall_time: float = 0.0
    start_latent: torch.Tensor | None = None

    def trace_rows(self):
        for tr in self.traces:
            for it, sample, ln, ls, la, lt, dn in tr.rows:
                yield (it, tr.t, sample, ln, ls, la, lt, dn)

    def write_trace_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for row in self.trace_rows():
                w.writerow([row[0], row[1], row[2], *(repr(float(v)) for v in row[3:])])


def run_attack(
    model: DiffusionModel,
    images: np.ndarray,
    config: AttackConfig,
    dump_iters=None,
) -> AttackResult:
    """Anchors-and-shims attack on a batch of ``(N, H, W, C)`` images.

    ``dump_iters(t, iteration, x_prev)`` receives every shim iterate.
    """
    config.check_grid(model.grid)
    started = time.perf_counter()
    calls0 = model.calls
    z0 = encode(images, dtype=model.dtype)
    upto = config.K if config.selected or config.start_mode == "inverse" else None
    anchors = model.invert(z0, upto=upto) if upto else None
    if config.start_mode == "inverse":
        x = anchors[config.K]
        noise = None
    else:
        noise = start_noise(config.seed, tuple(z0.shape)).to(model.dtype)
        x = forward_diffuse(model.schedule, z0, config.K, noise)

    result = AttackResult(images=np.empty(0), start_latent=x.clone())
    for t in model.grid.descending_from(config.K):
        if t in config.selected:
            prev = model.grid.prev(t)
            hook = None if dump_iters is None else (lambda it, xp, t=t: dump_iters(t, it, xp))
            delta, x, trace = optimize_shim(model, t, x, anchors[prev], config, on_iter=hook)
            result.traces.append(trace)
            result.shim_calls += trace.calls
            result.delta_norms[t] = torch.linalg.vector_norm(delta.flatten(1), dim=1).numpy()
        else:
            with torch.no_grad():
                x = model.sampler_step(x, t)
    result.images = decode(x)
    result.calls = model.calls - calls0
    result.wall_time = time.perf_counter() - started
    return result


def regen(model: DiffusionModel, images: np.ndarray, t_star: int, seed: int, round_index: int = 0) -> np.ndarray:
    """Noise the encoded image to ``t_star`` with seeded noise, then sample back to 0."""
    model.grid.check(t_star)
    z0 = encode(images, dtype=model.dtype)
    noise = start_noise(seed, tuple(z0.shape), round_index).to(model.dtype)
    x = forward_diffuse(model.schedule, z0, t_star, noise)
    return decode(model.generate(x, start=t_star))


def rinse(model: DiffusionModel, images: np.ndarray, t_star: int, rounds: int = 2, seed: int = 0) -> np.ndarray:
    """Regen repeated ``rounds`` times with fresh noise each round."""
    if rounds < 1:
        raise ConfigError("rinse needs at least one round")
    out = images
    for r in range(rounds):
        out = regen(model, out, t_star, seed, round_index=r)
    return out
