"""Conditional denoising-diffusion core at desk scale."""

from insertkit.diffusion.checkpoint import (
    CheckpointBundle,
    load_checkpoint,
    save_checkpoint,
)
from insertkit.diffusion.codec import (
    CenteredCodec,
    IdentityCodec,
    LatentCodec,
    codec_from_json,
)
from insertkit.diffusion.conditioning import (
    WordSequenceEncoder,
    pad_text_batch,
    tokenize_words,
)
from insertkit.diffusion.generator import DiffusionGenerator
from insertkit.diffusion.loss import (
    LossDraws,
    cfg_predict,
    sample_loss_draws,
    training_loss,
    triplet_training_loss,
)
from insertkit.diffusion.sampler import (
    SamplerConfig,
    ancestral_step,
    euler_ancestral_sample,
    karras_sigmas,
    timestep_for_sigma,
)
from insertkit.diffusion.schedule import (
    NoiseSchedule,
    make_schedule,
    q_sample,
    schedule_from_json,
)
from insertkit.diffusion.training import (
    TrainConfig,
    TrainReport,
    TrainingExample,
    examples_from_triplets,
    load_training_examples,
    train,
)
from insertkit.diffusion.unet import DenoiserConfig, ToyDenoiser

__all__ = [
    "CenteredCodec",
    "CheckpointBundle",
    "DenoiserConfig",
    "DiffusionGenerator",
    "IdentityCodec",
    "LatentCodec",
    "LossDraws",
    "NoiseSchedule",
    "SamplerConfig",
    "ToyDenoiser",
    "TrainConfig",
    "TrainReport",
    "TrainingExample",
    "WordSequenceEncoder",
    "ancestral_step",
    "cfg_predict",
    "codec_from_json",
    "euler_ancestral_sample",
    "examples_from_triplets",
    "karras_sigmas",
    "load_checkpoint",
    "load_training_examples",
    "make_schedule",
    "pad_text_batch",
    "q_sample",
    "sample_loss_draws",
    "save_checkpoint",
    "schedule_from_json",
    "timestep_for_sigma",
    "tokenize_words",
    "train",
    "training_loss",
    "triplet_training_loss",
]
