"""Self-supervised blind-spot video denoising with gradient-based filter
analysis, trained only on noisy footage."""

from .analysis import equivalent_filters, flow_from_filters, frame_contributions
from .network import BlindSpotVideoNet, NetConfig, build_network
from .training import NoiseModel, TrainConfig, fit, lr_at_epoch
from .pipeline import denoise_video
from .synth import SceneObject, SyntheticScene, add_gaussian_noise, synth_video
from .metrics import psnr, ssim
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "BlindSpotVideoNet",
    "NetConfig",
    "build_network",
    "NoiseModel",
    "TrainConfig",
    "fit",
    "lr_at_epoch",
    "denoise_video",
    "equivalent_filters",
    "flow_from_filters",
    "frame_contributions",
    "SceneObject",
    "SyntheticScene",
    "add_gaussian_noise",
    "synth_video",
    "psnr",
    "ssim",
    "load_checkpoint",
    "save_checkpoint",
]

__version__ = "0.1.0"
