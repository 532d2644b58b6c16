"""Momentum prototype banks and differentiable causal trimming.

A small numpy library that trains a fusion classifier end to end while
softly suppressing feature regions that resemble momentum-maintained
dataset prototypes, and evaluates the effect on a synthetic confounded
VQA benchmark with a changed-prior OOD split.
"""

__version__ = "0.1.0"

from .autodiff import GradCheckReport, Tensor, gradcheck, no_grad, softmax_rows
from .bank import FeatureBank, bank_average, batch_global_feature, init_bank, momentum_update
from .data import GeneratorConfig, Splits, VqaInstance, build_splits
from .model import LossBreakdown, ModelConfig, TrimModel, load_model, save_model
from .training import (
    AblationResult,
    AdamW,
    TrainConfig,
    TrainResult,
    evaluate,
    full_model_gradcheck,
    run_ablation,
    train,
)
from .trimming import TrimOutput, TrimParams, apply_trim, relevance_scores, soft_mask, trim_forward

__all__ = [
    "AblationResult",
    "AdamW",
    "FeatureBank",
    "GeneratorConfig",
    "GradCheckReport",
    "LossBreakdown",
    "ModelConfig",
    "Splits",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrimModel",
    "TrimOutput",
    "TrimParams",
    "VqaInstance",
    "apply_trim",
    "bank_average",
    "batch_global_feature",
    "build_splits",
    "evaluate",
    "full_model_gradcheck",
    "gradcheck",
    "init_bank",
    "load_model",
    "momentum_update",
    "no_grad",
    "relevance_scores",
    "run_ablation",
    "save_model",
    "soft_mask",
    "softmax_rows",
    "train",
    "trim_forward",
]
