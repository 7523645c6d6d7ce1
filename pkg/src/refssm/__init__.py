"""Spiking diagonal state-space sequence models with fixed-refractory and block-PSN spikes."""

from .model import ModelConfig, forward, init_params
from .spiking import FrConfig, PsnBlock, SurrogateParams
from .ssm import SsmLayerParams, fft_convolve, recurrent_scan, ssm_kernel
from .training import TrainConfig, TrainState

__version__ = "0.1.0"

__all__ = [
    "FrConfig",
    "ModelConfig",
    "PsnBlock",
    "SsmLayerParams",
    "SurrogateParams",
    "TrainConfig",
    "TrainState",
    "fft_convolve",
    "forward",
    "init_params",
    "recurrent_scan",
    "ssm_kernel",
]
