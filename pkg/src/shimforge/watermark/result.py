from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Detection:
    """Detector evidence; ``score`` is higher for more watermarked inputs.

    Bit schemes report the bit-match fraction and the recovered bits; the
    Tree-Ring detector reports the negative masked L1 Fourier distance.
    """

    scheme: str
    score: float
    bits: np.ndarray | None = None
