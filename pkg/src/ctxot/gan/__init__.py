"""Generator, critic and the adversarial training loop."""

from .config import TrainConfig
from .nets import SpectralState, critic_forward, generator_forward, init_critic, init_generator, spectral_normalize
from .training import (
    CriticRecord,
    GeneratorRecord,
    RMSprop,
    Trainer,
    TrainingDiverged,
    enhance,
    enhance_batch,
    gradient_penalty,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "TrainConfig",
    "SpectralState",
    "spectral_normalize",
    "init_generator",
    "init_critic",
    "generator_forward",
    "critic_forward",
    "RMSprop",
    "gradient_penalty",
    "CriticRecord",
    "GeneratorRecord",
    "Trainer",
    "TrainingDiverged",
    "train",
    "enhance",
    "enhance_batch",
    "save_checkpoint",
    "load_checkpoint",
]
