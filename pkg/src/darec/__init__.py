"""Adversarial domain adaptation for cross-domain rating prediction.

Train source-domain generators supervised, adversarially align target-domain
generators until a discriminator cannot tell the domains apart, and score
target interactions with the frozen source head.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor
from .data import DomainPairDataset, ReviewRecord, Vocabulary, assemble_pair
from .evaluate import EvalResult, delta_metric, normal_baseline, rmse_mae
from .models import DanVariant, ModelConfig, build_models
from .synth import SynthConfig, synthesize_domain_pair
from .training import TrainConfig, adapt_target, finetune_shared, pretrain_source

__all__ = [
    "DanVariant",
    "DomainPairDataset",
    "EvalResult",
    "ModelConfig",
    "ReviewRecord",
    "SynthConfig",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Vocabulary",
    "adapt_target",
    "assemble_pair",
    "build_models",
    "delta_metric",
    "finetune_shared",
    "normal_baseline",
    "pretrain_source",
    "rmse_mae",
    "synthesize_domain_pair",
]
