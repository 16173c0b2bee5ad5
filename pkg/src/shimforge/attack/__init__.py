from shimforge.attack.ambiguity import ambiguity_coexist, ambiguity_replace
from shimforge.attack.config import PRESETS, AttackConfig, load_config, preset
from shimforge.attack.losses import LossTerms, loss_align, loss_norm, loss_semantic, loss_total
from shimforge.attack.pipeline import AttackResult, regen, rinse, run_attack, start_noise
from shimforge.attack.shim import Shim, ShimTrace, optimize_shim, shim_gradient, step_memory_bytes

__all__ = [
    "PRESETS",
    "AttackConfig",
    "AttackResult",
    "LossTerms",
    "Shim",
    "ShimTrace",
    "ambiguity_coexist",
    "ambiguity_replace",
    "load_config",
    "loss_align",
    "loss_norm",
    "loss_semantic",
    "loss_total",
    "optimize_shim",
    "preset",
    "regen",
    "rinse",
    "run_attack",
    "shim_gradient",
    "start_noise",
    "step_memory_bytes",
]
