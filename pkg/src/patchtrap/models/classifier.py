"""Frozen classifier wrapper with a stable weight fingerprint.

The wrapper is the only model handle the rest of the package uses. It pins
the normalization applied to [0, 1] inputs, refuses wrongly-shaped batches,
and exposes three views of a forward pass: logits, probabilities, and
penultimate features. ``logits`` keeps the autograd graph (for patch
optimization and input-gradient detectors); ``predict`` is detached.

The fingerprint is a SHA-256 over a canonical serialization of the weights:
state-dict entries in sorted key order, each cast to little-endian float32.
Any third-party ``nn.Module`` can be wrapped as long as it implements
``forward`` (logits) and ``features`` (penultimate activations); persistence
additionally needs a :class:`ConvNetConfig`-compatible architecture.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import InputShapeError, LabelError, StateError
from .cnn import ConvNetConfig, SmallConvNet

MODEL_FORMAT_VERSION = 1

Normalization = tuple[tuple[float, float, float], tuple[float, float, float]]
DEFAULT_NORMALIZATION: Normalization = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))


class PredictOutput(NamedTuple):
    logits: torch.Tensor
    probabilities: torch.Tensor
    features: torch.Tensor


def weight_fingerprint(net: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    state = net.state_dict()
    for key in sorted(state):
        tensor = state[key]
        digest.update(key.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        array = tensor.detach().cpu().to(torch.float32).numpy()
        digest.update(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return digest.hexdigest()


@dataclass
class ClassifierModel:
    """A frozen model plus everything needed to query it consistently."""

    net: torch.nn.Module
    num_classes: int
    input_size: tuple[int, int]
    normalization: Normalization = DEFAULT_NORMALIZATION
    arch: ConvNetConfig | None = None
    provenance: dict = field(default_factory=dict)
    fingerprint: str = ""

    def __post_init__(self) -> None:
        self.net.eval()
        for param in self.net.parameters():
            param.requires_grad_(False)
        if not self.fingerprint:
            self.fingerprint = weight_fingerprint(self.net)

    def _check_batch(self, images: torch.Tensor) -> None:
        h, w = self.input_size
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (h, w):
            raise InputShapeError(
                f"model expects (B, 3, {h}, {w}) inputs, got {tuple(images.shape)}"
            )

    def check_class(self, label: int) -> None:
        if not 0 <= label < self.num_classes:
            raise LabelError(f"class {label} outside [0, {self.num_classes})")

    def normalize(self, images: torch.Tensor) -> torch.Tensor:
        mean, std = self.normalization
        mean_t = torch.tensor(mean, dtype=images.dtype).view(1, 3, 1, 1)
        std_t = torch.tensor(std, dtype=images.dtype).view(1, 3, 1, 1)
        return (images - mean_t) / std_t

    def logits(self, images: torch.Tensor) -> torch.Tensor:
        """Differentiable forward pass on [0, 1] images."""
        self._check_batch(images)
        param_dtype = next(self.net.parameters()).dtype
        return self.net(self.normalize(images).to(param_dtype))

    def predict(self, images: torch.Tensor, batch_size: int = 256) -> PredictOutput:
        """Detached logits, softmax probabilities, and penultimate features."""
        self._check_batch(images)
        logits_parts, feat_parts = [], []
        param_dtype = next(self.net.parameters()).dtype
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                chunk = self.normalize(images[start : start + batch_size]).to(param_dtype)
                feats = self.net.features(chunk)
                logits_parts.append(self.net.head(feats) if hasattr(self.net, "head") else self.net(chunk))
                feat_parts.append(feats)
        logits = torch.cat(logits_parts)
        return PredictOutput(
            logits=logits,
            probabilities=F.softmax(logits, dim=1),
            features=torch.cat(feat_parts),
        )


def prediction_interface(model: ClassifierModel) -> Callable[[torch.Tensor], torch.Tensor]:
    """Probability-only view of a model, for distillation teachers."""

    def probabilities(images: torch.Tensor) -> torch.Tensor:
        return model.predict(images).probabilities

    return probabilities


def save_model(model: ClassifierModel, path_prefix: str) -> dict:
    """Write ``<prefix>.pt`` (weights) and ``<prefix>.json`` (sidecar)."""
    if model.arch is None:
        raise InputShapeError("only models with a ConvNetConfig arch can be serialized")
    torch.save(model.net.state_dict(), path_prefix + ".pt")
    sidecar = {
        "format_version": MODEL_FORMAT_VERSION,
        "arch": model.arch.to_dict(),
        "normalization": [list(model.normalization[0]), list(model.normalization[1])],
        "num_classes": model.num_classes,
        "input_size": list(model.input_size),
        "fingerprint": model.fingerprint,
        "provenance": model.provenance,
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def load_model(path_prefix: str) -> ClassifierModel:
    if path_prefix.endswith(".pt") or path_prefix.endswith(".json"):
        path_prefix = os.path.splitext(path_prefix)[0]
    with open(path_prefix + ".json") as fh:
        sidecar = json.load(fh)
    arch = ConvNetConfig.from_dict(sidecar["arch"])
    net = SmallConvNet(arch)
    net.load_state_dict(torch.load(path_prefix + ".pt", weights_only=True))
    model = ClassifierModel(
        net=net,
        num_classes=int(sidecar["num_classes"]),
        input_size=tuple(sidecar["input_size"]),
        normalization=(
            tuple(sidecar["normalization"][0]),
            tuple(sidecar["normalization"][1]),
        ),
        arch=arch,
        provenance=dict(sidecar.get("provenance", {})),
    )
    stored = sidecar.get("fingerprint")
    if stored and stored != model.fingerprint:
        raise StateError("model fingerprint mismatch; artifact may be corrupt")
    return model
