from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

COLUMNS = ("BA", "ACC", "T@1%F", "PSNR", "SSIM", "FD-DCT")
FD_WARNING = (
    "FD-DCT is a Frechet distance on 8x8 luminance DCT features, a stand-in for FID; "
    "its absolute values are not comparable to Inception-based FID."
)


@dataclass
class Cell:
    scheme: str
    row: str
    n: int = 0
    BA: float | None = None
    ACC: float | None = None
    TPR: float | None = None
    PSNR: float | None = None
    SSIM: float | None = None
    FD: float | None = None
    threshold: float | None = None
    status: str = "ok"
    error: str = ""

    def values(self) -> tuple:
        return (self.BA, self.ACC, self.TPR, self.PSNR, self.SSIM, self.FD)


@dataclass
class AmbiguityCell:
    scheme: str
    row: str
    n: int = 0
    BA_w: float | None = None
    BA_new: float | None = None
    TPR_w: float | None = None
    TPR_new: float | None = None
    status: str = "ok"
    error: str = ""


@dataclass
class MetricsReport:
    config: dict
    seeds: dict
    cells: list[Cell] = field(default_factory=list)
    ambiguity: list[AmbiguityCell] = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    # Not serialized: raw scores for ROC dumps and wall-clock timings.
    rocs: dict = field(default_factory=dict, repr=False)
    timings: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self) -> bool:
        return all(c.status == "ok" for c in self.cells) and all(c.status == "ok" for c in self.ambiguity)

    def cell(self, scheme: str, row: str) -> Cell:
        for c in self.cells:
            if c.scheme == scheme and c.row == row:
                return c
        raise KeyError((scheme, row))

    def ambiguity_cell(self, scheme: str, row: str) -> AmbiguityCell:
        for c in self.ambiguity:
            if c.scheme == scheme and c.row == row:
                return c
        raise KeyError((scheme, row))

    def to_dict(self) -> dict:
        return {
            "header": {"columns": list(COLUMNS), "warning": FD_WARNING},
            "config": self.config,
            "seeds": self.seeds,
            "cells": [_clean(asdict(c)) for c in self.cells],
            "ambiguity": [_clean(asdict(c)) for c in self.ambiguity],
            "extras": _clean(self.extras),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            config=d["config"],
            seeds=d["seeds"],
            cells=[Cell(**c) for c in d["cells"]],
            ambiguity=[AmbiguityCell(**c) for c in d["ambiguity"]],
            extras=d.get("extras", {}),
        )

    def to_text(self) -> str:
        lines = [f"# {FD_WARNING}", f"# n per cell: {self.config.get('n_images')}, master seed: {self.config.get('seed')}"]
        head = f"{'Method':<14}" + "".join(f"{c:>9}" for c in COLUMNS) + f"{'n':>6}"
        scheme = None
        for c in self.cells:
            if c.scheme != scheme:
                scheme = c.scheme
                lines += ["", scheme, head]
            if c.status != "ok":
                lines.append(f"{c.row:<14}  FAILED: {c.error}")
                continue
            lines.append(f"{c.row:<14}" + "".join(_fmt(v, col) for v, col in zip(c.values(), COLUMNS)) + f"{c.n:>6}")
        if self.ambiguity:
            lines += ["", "ambiguity", f"{'Method':<22}{'BA(w)':>9}{'BA(w*)':>9}{'T(w)':>9}{'T(w*)':>9}{'n':>6}"]
            for c in self.ambiguity:
                label = f"{c.scheme}/{c.row}"
                if c.status != "ok":
                    lines.append(f"{label:<22}  FAILED: {c.error}")
                    continue
                vals = (c.BA_w, c.BA_new, c.TPR_w, c.TPR_new)
                lines.append(f"{label:<22}" + "".join(_fmt(v, "BA") for v in vals) + f"{c.n:>6}")
        return "\n".join(lines) + "\n"


def _fmt(v, col) -> str:
    if v is None:
        return f"{'-':>9}"
    if isinstance(v, float) and math.isinf(v):
        return f"{'inf':>9}"
    return f"{v:>9.2f}" if col in ("PSNR", "FD-DCT") else f"{v:>9.3f}"


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj
