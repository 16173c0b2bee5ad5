from shimforge.watermark.blocksvd import detect_blocksvd, embed_blocksvd
from shimforge.watermark.keys import BitKey, TreeRingKey, key_from_dict, load_key, save_key
from shimforge.watermark.result import Detection
from shimforge.watermark.spread import detect_spread, embed_spread
from shimforge.watermark.treering import (
    inject,
    invert_to_noise,
    ring_distance,
    ring_mask,
    score_latents,
    treering_detect,
    treering_generate,
)

EMBEDDERS = {"blocksvd": embed_blocksvd, "spread": embed_spread}
DETECTORS = {"blocksvd": detect_blocksvd, "spread": detect_spread}

__all__ = [
    "BitKey",
    "DETECTORS",
    "Detection",
    "EMBEDDERS",
    "TreeRingKey",
    "detect_blocksvd",
    "detect_spread",
    "embed_blocksvd",
    "embed_spread",
    "inject",
    "invert_to_noise",
    "key_from_dict",
    "load_key",
    "ring_distance",
    "ring_mask",
    "save_key",
    "score_latents",
    "treering_detect",
    "treering_generate",
]
