"""Headline attack metrics: clean accuracy and attack success rate.

Accuracy is measured on patch-composited clean frames against true labels.
Attack success is the fraction of triggered frames predicted as the target
class, over test images whose true label is not already the target. Both
streams may pass through per-environment physical transforms.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..compositor import Patch, TriggerSpec, apply_trigger, attach_patch, resolve_trigger_positions
from ..data import Dataset
from ..errors import EvaluationError, MissingLabelsError
from ..models import ClassifierModel
from ..phystransform import EnvTransforms
from ..seeding import torch_generator


@dataclass
class EvalReport:
    """One evaluation outcome with enough context to reproduce it.

    Per-sample predictions are kept so the headline numbers can be recomputed
    exactly from the stored arrays.
    """

    acc: float
    asr: float
    n_clean: int
    n_attack: int
    target_class: int
    clean_predictions: np.ndarray
    clean_labels: np.ndarray
    attack_predictions: np.ndarray
    attack_labels: np.ndarray
    patch_fingerprint: str
    model_fingerprint: str
    layout: dict
    trigger: dict
    environments: dict = field(default_factory=dict)
    seconds: float = 0.0

    def recompute(self) -> tuple[float, float]:
        acc = float((self.clean_predictions == self.clean_labels).mean())
        asr = float((self.attack_predictions == self.target_class).mean())
        return acc, asr

    def to_row(self) -> dict:
        return {
            "patch_width": self.layout["patch_width"],
            "trigger_kind": self.trigger["kind"],
            "trigger_width": self.trigger["width"],
            "placement": self.trigger["placement"],
            "target_class": self.target_class,
            "acc": self.acc,
            "asr": self.asr,
            "n_clean": self.n_clean,
            "n_attack": self.n_attack,
            "patch_fingerprint": self.patch_fingerprint,
            "model_fingerprint": self.model_fingerprint,
        }


def evaluate_acc_asr(
    model: ClassifierModel,
    patch: Patch,
    dataset: Dataset,
    spec: TriggerSpec,
    target_class: int,
    transforms: EnvTransforms | None = None,
    seed: int = 0,
    batch_size: int = 256,
) -> EvalReport:
    """Evaluate a patch on a labeled test set.

    Trigger placement follows ``spec`` (the training policy) with randomness
    pinned by ``seed``; sweeps can pass a different spec to probe mismatched
    placements.
    """
    if dataset.labels is None:
        raise MissingLabelsError("evaluation needs a labeled test set")
    if len(dataset) == 0:
        raise EvaluationError("evaluation needs a non-empty test set")
    model.check_class(target_class)
    start = time.perf_counter()

    labels = dataset.labels
    clean_frames = attach_patch(dataset.images, patch).to(torch.float32)
    if transforms is not None and transforms.clean is not None:
        clean_frames = transforms.clean.apply(clean_frames)
    clean_pred = model.predict(clean_frames, batch_size=batch_size).logits.argmax(dim=1)
    # float64 mean so the headline equals recompute() on the stored arrays
    acc = float((clean_pred == labels).double().mean())

    keep = labels != target_class
    if int(keep.sum()) == 0:
        raise EvaluationError(
            f"every test image already has the target label {target_class}; ASR undefined"
        )
    attack_base = attach_patch(dataset.images[keep], patch).to(torch.float32)
    positions = None
    if spec.kind == "square":
        positions = resolve_trigger_positions(
            spec, patch.layout, int(keep.sum()), torch_generator(seed, "eval-placement")
        )
    trig_frames = apply_trigger(attack_base, spec, patch.layout, positions=positions)
    if transforms is not None and transforms.attack is not None:
        trig_frames = transforms.attack.apply(trig_frames)
    attack_pred = model.predict(trig_frames, batch_size=batch_size).logits.argmax(dim=1)
    asr = float((attack_pred == target_class).double().mean())

    return EvalReport(
        acc=acc,
        asr=asr,
        n_clean=len(dataset),
        n_attack=int(keep.sum()),
        target_class=target_class,
        clean_predictions=clean_pred.numpy(),
        clean_labels=labels.numpy(),
        attack_predictions=attack_pred.numpy(),
        attack_labels=labels[keep].numpy(),
        patch_fingerprint=patch.fingerprint(),
        model_fingerprint=model.fingerprint,
        layout=patch.layout.to_dict(),
        trigger=spec.to_dict(),
        environments={
            "clean": transforms.clean.environment if transforms and transforms.clean else None,
            "attack": transforms.attack.environment if transforms and transforms.attack else None,
        },
        seconds=time.perf_counter() - start,
    )


def unpatched_accuracy(model: ClassifierModel, dataset: Dataset, batch_size: int = 256) -> float:
    """Reference accuracy on originals, for patch-cost comparisons."""
    if dataset.labels is None:
        raise MissingLabelsError("accuracy needs labels")
    pred = model.predict(dataset.images, batch_size=batch_size).logits.argmax(dim=1)
    return float((pred == dataset.labels).double().mean())
