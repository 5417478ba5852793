"""Noise schedule, DDIM stepping, the tiny denoiser and its training loop."""

from .denoiser import DenoiserModel, DenoiserOutput
from .kl import kl_oracle, model_posterior, posterior
from .sampling import (ddim_invert_step, ddim_step, denoise, forward_diffuse, invert,
                       predict_x0, timesteps)
from .schedule import NoiseSchedule, make_schedule
from .training import TextVideoDiffusion, train, training_loss

__all__ = [
    "DenoiserModel", "DenoiserOutput", "NoiseSchedule", "TextVideoDiffusion",
    "ddim_invert_step", "ddim_step", "denoise", "forward_diffuse", "invert",
    "kl_oracle", "make_schedule", "model_posterior", "posterior", "predict_x0",
    "timesteps", "train", "training_loss",
]
