"""Watermark keys and their JSON form.

Carriers, block assignments and ring targets are never stored; they are
regenerated from ``seed`` on load, so a key file is a few short fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from shimforge.errors import ArtifactIOError, ConfigError

N_BITS = 32

# Defaults sized so both bit schemes stay above 35 dB PSNR on the procedural set.
DEFAULT_STRENGTH = {"blocksvd": 0.22, "spread": 0.015}


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(tag,)))


@dataclass(frozen=True)
class BitKey:
    bits: tuple[int, ...]
    seed: int
    strength: float
    scheme: str = "blocksvd"

    def __post_init__(self):
        if len(self.bits) != N_BITS or any(b not in (0, 1) for b in self.bits):
            raise ConfigError(f"bit key needs exactly {N_BITS} binary values")
        if self.scheme not in ("blocksvd", "spread"):
            raise ConfigError(f"unknown bit scheme {self.scheme!r}")
        if not self.strength > 0:
            raise ConfigError("strength must be positive")

    @classmethod
    def random(cls, seed: int, scheme: str = "blocksvd", strength: float | None = None) -> "BitKey":
        bits = tuple(int(b) for b in _stream(seed, 0).integers(0, 2, N_BITS))
        return cls(bits, int(seed), DEFAULT_STRENGTH[scheme] if strength is None else float(strength), scheme)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int64)

    def carrier_rng(self) -> np.random.Generator:
        return _stream(self.seed, 1)

    def flipped(self) -> "BitKey":
        return BitKey(tuple(1 - b for b in self.bits), self.seed, self.strength, self.scheme)

    def bits_hex(self) -> str:
        return f"{int(''.join(map(str, self.bits)), 2):08x}"

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "seed": self.seed, "bits": self.bits_hex(), "strength": self.strength}


@dataclass(frozen=True)
class TreeRingKey:
    seed: int
    channel: int = 0
    radii: tuple[int, ...] = (3, 5, 7)
    size: int = 32
    targets: tuple[complex, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.channel not in (0, 1, 2):
            raise ConfigError(f"channel must be 0, 1 or 2, got {self.channel}")
        radii = tuple(int(r) for r in self.radii)
        if len(set(radii)) != len(radii) or any(r < 1 or r >= self.size // 2 for r in radii):
            raise ConfigError(f"radii must be distinct and inside (0, {self.size // 2})")
        object.__setattr__(self, "radii", radii)
        draws = _stream(self.seed, 2).normal(0.0, np.sqrt(0.5), size=(len(radii), 2))
        object.__setattr__(self, "targets", tuple(complex(a, b) for a, b in draws))

    @classmethod
    def random(cls, seed: int, channel: int = 0) -> "TreeRingKey":
        return cls(int(seed), channel)

    def to_dict(self) -> dict:
        return {"scheme": "treering", "seed": self.seed, "channel": self.channel, "radii": list(self.radii)}


def key_from_dict(d: dict) -> BitKey | TreeRingKey:
    scheme = d.get("scheme")
    if scheme == "treering":
        return TreeRingKey(int(d["seed"]), int(d.get("channel", 0)), tuple(d.get("radii", (3, 5, 7))))
    if scheme in ("blocksvd", "spread"):
        value = int(d["bits"], 16)
        bits = tuple((value >> (N_BITS - 1 - i)) & 1 for i in range(N_BITS))
        return BitKey(bits, int(d["seed"]), float(d["strength"]), scheme)
    raise ConfigError(f"unknown key scheme {scheme!r}")


def save_key(path, key: BitKey | TreeRingKey) -> None:
    try:
        Path(path).write_text(json.dumps(key.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write key {path}: {exc}") from exc


def load_key(path) -> BitKey | TreeRingKey:
    try:
        return key_from_dict(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read key {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed key file {path}: {exc}") from exc
