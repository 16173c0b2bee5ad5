from shimforge.diffusion.codec import decode, encode
from shimforge.diffusion.data import procedural_dataset, quantize8
from shimforge.diffusion.denoiser import Denoiser, DenoiserConfig
from shimforge.diffusion.sampler import DiffusionModel, LatentTrajectory, forward_diffuse
from shimforge.diffusion.schedule import NoiseSchedule, SamplerGrid, make_schedule
from shimforge.diffusion.train import TrainConfig, TrainResult, train_denoiser
from shimforge.diffusion.weights import load_weights, save_weights

__all__ = [
    "Denoiser",
    "DenoiserConfig",
    "DiffusionModel",
    "LatentTrajectory",
    "NoiseSchedule",
    "SamplerGrid",
    "TrainConfig",
    "TrainResult",
    "decode",
    "encode",
    "forward_diffuse",
    "load_weights",
    "make_schedule",
    "procedural_dataset",
    "quantize8",
    "save_weights",
    "train_denoiser",
]
