"""Underwater image enhancement by loss-guided diffusion sampling."""

from .diffusion import (
    GaussianWorldPredictor,
    NoiseSchedule,
    VariancePolicy,
    forward_sample,
    linear_schedule,
    predict_x0,
)
from .guidance import (
    EnhanceRequest,
    GuidanceConfig,
    Sampler,
    Variant,
    enhance,
    guided_ddim_enhance,
    guided_ddpm_enhance,
)
from .losses import LossWeights

__version__ = "0.1.0"
