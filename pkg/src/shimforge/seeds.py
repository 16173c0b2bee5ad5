"""Counter-based seed derivation.

Every stage seed is ``SeedSequence(master, spawn_key=(index,))`` where
``index`` is the stage's position in :data:`STAGES`. Appending stages keeps
existing seeds stable; reordering the list changes them.
"""

from __future__ import annotations

import numpy as np

STAGES = (
    "dataset",
    "train",
    "eval-images",
    "eval-null",
    "key-blocksvd",
    "key-spread",
    "key-treering",
    "treering-noise",
    "treering-null-noise",
    "attack",
    "regen",
    "key-blocksvd-new",
    "key-spread-new",
    "key-treering-new",
    "eval-holdout",
    "treering-holdout-noise",
)


def derive_seed(master: int, stage: str) -> int:
    index = STAGES.index(stage)
    return int(np.random.SeedSequence(int(master), spawn_key=(index,)).generate_state(1, dtype=np.uint32)[0])


def seed_manifest(master: int) -> dict[str, int]:
    return {name: derive_seed(master, name) for name in STAGES}


def seed_list(base: int, n: int) -> list[int]:
    """``n`` independent per-item seeds spawned from ``base``."""
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in np.random.SeedSequence(int(base)).spawn(n)]
