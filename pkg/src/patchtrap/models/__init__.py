"""Victim-model zoo: a small CNN, training, and model-surgery operations.

Models are wrapped in :class:`ClassifierModel`, which freezes weights and
exposes prediction (logits, probabilities, penultimate features). Operations
that derive new models (pruning, fine-tuning, distillation, poisoned
retraining) always return fresh wrappers and never mutate their input.
"""

from .classifier import ClassifierModel, PredictOutput, load_model, prediction_interface, save_model
from .cnn import ConvNetConfig, SmallConvNet
from .poisoning import poison_dataset
from .pruning import PruneConfig, global_sparsity, prunable_tensors, prune_global_l1
from .training import distill_surrogate, evaluate_accuracy, finetune, train_baseline

__all__ = [
    "ClassifierModel",
    "ConvNetConfig",
    "PredictOutput",
    "PruneConfig",
    "SmallConvNet",
    "distill_surrogate",
    "evaluate_accuracy",
    "finetune",
    "global_sparsity",
    "load_model",
    "poison_dataset",
    "prediction_interface",
    "prunable_tensors",
    "prune_global_l1",
    "save_model",
    "train_baseline",
]
