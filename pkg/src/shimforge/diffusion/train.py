from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from shimforge.diffusion.codec import encode
from shimforge.diffusion.denoiser import Denoiser, DenoiserConfig
from shimforge.diffusion.schedule import make_schedule
from shimforge.errors import ConfigError, TrainingError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 6000
    batch_size: int = 32
    lr: float = 2e-3
    warmup: int = 100
    ema_decay: float = 0.995
    grad_clip: float = 1.0
    log_every: int = 100


@dataclass
class TrainResult:
    denoiser: Denoiser
    losses: list[float] = field(default_factory=list)
    start_step: int = 0

    @property
    def step(self) -> int:
        return self.start_step + len(self.losses)

    def running_loss(self, which: str = "last", window: int = 100) -> float:
        chunk = self.losses[:window] if which == "first" else self.losses[-window:]
        return float(np.mean(chunk))

    def log_rows(self, every: int = 100) -> list[tuple[int, float]]:
        """``(step, mean loss over the preceding block)``; a trailing partial block is included."""
        rows = []
        for start in range(0, len(self.losses), every):
            block = self.losses[start : start + every]
            rows.append((self.start_step + start + len(block), float(np.mean(block))))
        return rows


def train_denoiser(
    dataset: np.ndarray,
    steps: int | None = None,
    seed: int = 0,
    config: TrainConfig | None = None,
    model_config: DenoiserConfig | None = None,
    init: Denoiser | None = None,
    start_step: int = 0,
) -> TrainResult:
    """Fit the noise-prediction loss on ``dataset`` (``(N, H, W, C)`` in [0, 1]).

    Training runs in float32 on a single thread; the returned weights are an
    exponential moving average of the iterates. Passing ``init`` resumes from
    those weights with a fresh optimizer and continues the step counter.
    """
    cfg = config or TrainConfig()
    steps = cfg.steps if steps is None else steps
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 4:
        raise ConfigError(f"dataset must be (N, H, W, C), got {data.shape}")

    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    if init is not None:
        model = copy.deepcopy(init).float()
        for p in model.parameters():
            p.requires_grad_(True)
    else:
        mc = model_config or DenoiserConfig(image_channels=data.shape[3], image_size=data.shape[1])
        model = Denoiser(mc).float()
    model.train()
    ema = copy.deepcopy(model)
    for p in ema.parameters():
        p.requires_grad_(False)

    schedule = make_schedule(model.config.T)
    sqrt_ab = torch.tensor(np.sqrt(schedule.alpha_bar), dtype=torch.float32)
    sqrt_1mab = torch.tensor(np.sqrt(1.0 - schedule.alpha_bar), dtype=torch.float32)
    latents = encode(data, dtype=torch.float32)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult(ema, start_step=start_step)
    for i in range(steps):
        lr = cfg.lr * min(1.0, (i + 1) / cfg.warmup) * 0.5 * (1 + math.cos(math.pi * i / max(steps, 1)))
        for group in opt.param_groups:
            group["lr"] = lr
        idx = torch.from_numpy(rng.integers(0, len(latents), cfg.batch_size))
        x0 = latents[idx]
        t = torch.randint(1, model.config.T + 1, (cfg.batch_size,), generator=gen)
        noise = torch.randn(x0.shape, generator=gen)
        xt = sqrt_ab[t, None, None, None] * x0 + sqrt_1mab[t, None, None, None] * noise
        if model.config.prediction == "v":
            target = sqrt_ab[t, None, None, None] * noise - sqrt_1mab[t, None, None, None] * x0
        else:
            target = noise
        loss = (model.raw(xt, t, model.null_context) - target).pow(2).mean()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError("non-finite training loss", start_step + i)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        with torch.no_grad():
            decay = min(cfg.ema_decay, (1 + i) / (10 + i))
            for pe, pm in zip(ema.parameters(), model.parameters()):
                pe.mul_(decay).add_(pm, alpha=1 - decay)
        result.losses.append(value)
        if cfg.log_every and (i + 1) % cfg.log_every == 0:
            log.info("step %d loss %.5f", start_step + i + 1, np.mean(result.losses[-cfg.log_every :]))
    ema.eval()
    return result
