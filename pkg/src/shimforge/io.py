"""PNG and manifest persistence. Images cross the file boundary as 8-bit PNG."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from shimforge import __version__
from shimforge.errors import ArtifactIOError, ShapeError


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def claim(path) -> Path:
    """Return ``path`` after checking nothing is there yet (outputs are write-once)."""
    path = Path(path)
    if path.exists():
        raise ArtifactIOError(f"refusing to overwrite existing output {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def save_png(path, image: np.ndarray) -> Path:
    path = claim(path)
    img = to_uint8(image)
    if img.ndim != 3 or img.shape[-1] not in (1, 3):
        raise ShapeError(f"expected (H, W, 1|3) image, got {img.shape}")
    try:
        Image.fromarray(img if img.shape[-1] == 3 else img[..., 0]).save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def load_png(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ArtifactIOError(f"cannot read image {path}: {exc}") from exc
    return arr


def image_paths(path) -> list[Path]:
    """A single PNG or every PNG in a directory, sorted by name."""
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.png"))
    if path.is_file():
        return [path]
    raise ArtifactIOError(f"no such file or directory: {path}")


def load_images(path) -> tuple[np.ndarray, list[Path]]:
    paths = image_paths(path)
    if not paths:
        raise ArtifactIOError(f"no PNG images under {path}")
    images = [load_png(p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ShapeError(f"images under {path} have mixed shapes {sorted(shapes)}")
    return np.stack(images), paths


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    seeds: dict[str, int]
    inputs: list[str] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)
    started: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    finished: str = ""

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "tool_version": __version__,
            "command": self.command,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": self.finished,
        }

    def write(self, path) -> Path:
        """Write the manifest; output paths under its directory are stored relative to it."""
        self.finished = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        path = claim(path)
        root = path.parent.resolve()
        rel = {}
        for name, digest in self.outputs.items():
            p = Path(name).resolve()
            rel[str(p.relative_to(root)) if p.is_relative_to(root) else name] = digest
        data = self.to_dict()
        data["outputs"] = rel
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path
