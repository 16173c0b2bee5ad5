"""Noise-prediction network: a three-stage conv UNet with one cross-attention
block at the 8x8 bottleneck. The context enters only through the K/V
projections of that block, which is the pathway a shim perturbs.

With ``prediction="v"`` the conv stack outputs ``v = sqrt(ab) eps - sqrt(1-ab) x0``
and ``forward`` converts it to a noise prediction. A raw noise output carries
its error into the implied x0 scaled by ``1/sqrt(ab)`` (about 150 at t=T),
which sends samples from pure noise far outside the data range.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from shimforge.diffusion.schedule import make_schedule
from shimforge.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class DenoiserConfig:
    image_channels: int = 3
    image_size: int = 32
    channels: tuple[int, int, int] = (16, 24, 48)
    context_tokens: int = 64
    context_dim: int = 128
    attn_dim: int = 32
    time_dim: int = 32
    time_knots: int = 64
    T: int = 1000
    prediction: str = "v"

    def __post_init__(self):
        if self.prediction not in ("v", "eps"):
            raise ConfigError(f"prediction must be 'v' or 'eps', got {self.prediction!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


class TimeTable(nn.Module):
    """Learned embedding on ``time_knots + 1`` evenly spaced knots, linearly interpolated."""

    def __init__(self, T: int, knots: int, dim: int):
        super().__init__()
        self.T = T
        self.knots = knots
        self.table = nn.Parameter(torch.randn(knots + 1, dim) * 0.5)
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        pos = t.to(self.table.dtype) * (self.knots / self.T)
        lo = pos.floor().clamp(0, self.knots - 1)
        frac = (pos - lo).unsqueeze(-1)
        lo = lo.long()
        emb = self.table[lo] * (1 - frac) + self.table[lo + 1] * frac
        return self.mlp(emb)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """softmax(Q K^T / sqrt(d)) V with Q from spatial features and K, V from the context."""

    def __init__(self, channels: int, context_dim: int, attn_dim: int):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.to_q = nn.Linear(channels, attn_dim, bias=False)
        self.to_k = nn.Linear(context_dim, attn_dim, bias=False)
        self.to_v = nn.Linear(context_dim, attn_dim, bias=False)
        self.to_out = nn.Linear(attn_dim, channels)
        self.scale = 1.0 / math.sqrt(attn_dim)
        self.last_weights: torch.Tensor | None = None
        self.keep_weights = False

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)  # (B, HW, C)
        q = self.to_q(tokens)
        k = self.to_k(context)  # (B, L, A)
        v = self.to_v(context)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        if self.keep_weights:
            self.last_weights = attn.detach()
        out = self.to_out(attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class Denoiser(nn.Module):
    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        c1, c2, c3 = config.channels
        td = config.time_dim
        self.time_embed = TimeTable(config.T, config.time_knots, td)
        self.null_context = nn.Parameter(torch.randn(config.context_tokens, config.context_dim))
        self.conv_in = nn.Conv2d(config.image_channels, c1, 3, padding=1)
        self.enc1 = ResBlock(c1, c1, td)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc2 = ResBlock(c2, c2, td)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.mid1 = ResBlock(c3, c3, td)
        self.attn = CrossAttention(c3, config.context_dim, config.attn_dim)
        self.mid2 = ResBlock(c3, c3, td)
        self.up2 = nn.Conv2d(c3, c2, 3, padding=1)
        self.dec2 = ResBlock(2 * c2, c2, td)
        self.up1 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = ResBlock(2 * c1, c1, td)
        self.norm_out = nn.GroupNorm(min(8, c1), c1)
        self.conv_out = nn.Conv2d(c1, config.image_channels, 3, padding=1)
        # kept in float64 outside the module state so dtype casts never round it
        self.alpha_bar = np.asarray(make_schedule(config.T).alpha_bar, dtype=np.float64)

    def forward(self, x: torch.Tensor, t: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        out, t = self._raw(x, t, context)
        if self.config.prediction == "eps":
            return out
        ab = torch.as_tensor(self.alpha_bar, dtype=x.dtype)[t][:, None, None, None]
        return (1 - ab).sqrt() * x + ab.sqrt() * out

    def raw(self, x: torch.Tensor, t: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """The conv stack's output before conversion (``v`` or ``eps``, per config)."""
        return self._raw(x, t, context)[0]

    def _raw(self, x, t, context):
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
            raise ShapeError(f"latent shape {tuple(x.shape)} incompatible with {cfg.image_channels}x{cfg.image_size}^2")
        if context.ndim == 2:
            context = context.unsqueeze(0).expand(x.shape[0], -1, -1)
        if context.shape[1:] != (cfg.context_tokens, cfg.context_dim) or context.shape[0] != x.shape[0]:
            raise ShapeError(f"context shape {tuple(context.shape)} incompatible with denoiser")
        t = torch.as_tensor(t, device=x.device)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        temb = self.time_embed(t)
        h1 = self.enc1(self.conv_in(x), temb)
        h2 = self.enc2(self.down1(h1), temb)
        h = self.mid1(self.down2(h2), temb)
        h = self.attn(h, context)
        h = self.mid2(h, temb)
        h = self.up2(F.interpolate(h, scale_factor=2.0, mode="nearest"))
        h = self.dec2(torch.cat([h, h2], dim=1), temb)
        h = self.up1(F.interpolate(h, scale_factor=2.0, mode="nearest"))
        h = self.dec1(torch.cat([h, h1], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(h))), t


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
