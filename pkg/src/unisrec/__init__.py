"""Universal, ID-agnostic sequence representation learning for
recommendation: text-embedding item encoding via parametric whitening and
an MoE adaptor, contrastive multi-domain pre-training, parameter-efficient
fine-tuning, and full leave-one-out evaluation."""

from . import autodiff, corpus, evaluate, finetune, item_encoder, numeric, pretrain, seq_encoder, trainer
from .model import ModelConfig, UniSRecModel
from .rng import RngStreams
from .trainer import TrainConfig, run_finetune, run_pretrain

__all__ = [
    "ModelConfig",
    "RngStreams",
    "TrainConfig",
    "UniSRecModel",
    "autodiff",
    "corpus",
    "evaluate",
    "finetune",
    "item_encoder",
    "numeric",
    "pretrain",
    "run_finetune",
    "run_pretrain",
    "seq_encoder",
    "trainer",
]

__version__ = "0.1.0"
