"""Baseline training, fine-tuning, and surrogate distillation."""

from __future__ import annotations

import time
from typing import Callable

import torch
import torch.nn.functional as F

from ..data import Dataset
from ..errors import MissingLabelsError
from ..seeding import derive_seed, torch_generator
from .classifier import DEFAULT_NORMALIZATION, ClassifierModel
from .cnn import ConvNetConfig, SmallConvNet


def _shuffled_batches(
    n: int, batch_size: int, generator: torch.Generator
) -> list[torch.Tensor]:
    order = torch.randperm(n, generator=generator)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def evaluate_accuracy(model: ClassifierModel, dataset: Dataset, batch_size: int = 256) -> float:
    if dataset.labels is None:
        raise MissingLabelsError("accuracy needs a labeled dataset")
    preds = model.predict(dataset.images, batch_size=batch_size).logits.argmax(dim=1)
    return float((preds == dataset.labels).float().mean())


def _fit(
    net: torch.nn.Module,
    dataset: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    mask_hook: Callable[[], None] | None = None,
    normalization=DEFAULT_NORMALIZATION,
) -> None:
    """Cross-entropy training loop shared by all model-producing ops."""
    mean = torch.tensor(normalization[0]).view(1, 3, 1, 1)
    std = torch.tensor(normalization[1]).view(1, 3, 1, 1)
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    gen = torch_generator(seed, "fit-shuffle")
    net.train()
    for _ in range(epochs):
        for idx in _shuffled_batches(len(dataset), batch_size, gen):
            x = (dataset.images[idx] - mean) / std
            loss = F.cross_entropy(net(x), dataset.labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if mask_hook is not None:
                mask_hook()
    net.eval()


def train_baseline(
    train_data: Dataset,
    test_data: Dataset | None = None,
    arch: ConvNetConfig = ConvNetConfig(),
    epochs: int = 15,
    lr: float = 1e-3,
    batch_size: int = 128,
    seed: int = 0,
) -> ClassifierModel:
    """Train a fresh victim from scratch; returns a frozen wrapper.

    Same seed and data give bit-identical weights. Final train/test accuracy
    lands in the wrapper's provenance.
    """
    if train_data.labels is None:
        raise MissingLabelsError("train_baseline needs a labeled dataset")
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "model-init"))
        net = SmallConvNet(arch)
    start = time.perf_counter()
    _fit(net, train_data, epochs, lr, batch_size, seed)
    h, w = train_data.image_size
    model = ClassifierModel(
        net=net,
        num_classes=arch.num_classes,
        input_size=(h, w),
        arch=arch,
        provenance={
            "trained": "baseline",
            "epochs": epochs,
            "lr": lr,
            "batch_size": batch_size,
            "seed": seed,
            "seconds": round(time.perf_counter() - start, 3),
        },
    )
    model.provenance["train_accuracy"] = evaluate_accuracy(model, train_data)
    if test_data is not None:
        model.provenance["test_accuracy"] = evaluate_accuracy(model, test_data)
    return model


def _clone_net(model: ClassifierModel) -> torch.nn.Module:
    if model.arch is None:
        raise MissingLabelsError("cannot clone a model without an arch config")
    net = SmallConvNet(model.arch)
    net.load_state_dict(model.net.state_dict())
    for param in net.parameters():
        param.requires_grad_(True)
    return net


def finetune(
    model: ClassifierModel,
    data: Dataset,
    epochs: int = 2,
    lr: float = 5e-4,
    batch_size: int = 128,
    seed: int = 0,
) -> ClassifierModel:
    """Continue supervised training on a copy; the input model is untouched."""
    if data.labels is None:
        raise MissingLabelsError("finetune needs a labeled dataset")
    net = _clone_net(model)
    _fit(net, data, epochs, lr, batch_size, seed, normalization=model.normalization)
    return ClassifierModel(
        net=net,
        num_classes=model.num_classes,
        input_size=model.input_size,
        normalization=model.normalization,
        arch=model.arch,
        provenance={
            **model.provenance,
            "finetuned_from": model.fingerprint,
            "finetune_epochs": epochs,
            "finetune_lr": lr,
        },
    )


def distill_surrogate(
    teacher: Callable[[torch.Tensor], torch.Tensor],
    data: Dataset,
    arch: ConvNetConfig = ConvNetConfig(),
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 128,
    seed: int = 0,
    eval_data: Dataset | None = None,
    normalization=DEFAULT_NORMALIZATION,
) -> ClassifierModel:
    """Train a student against teacher probabilities only.

    ``teacher`` maps a [0, 1] image batch to class probabilities; weights are
    never touched, so any prediction service fits. Labels on ``data`` are
    ignored. Provenance records top-1 agreement with the teacher on
    ``eval_data`` (or on ``data`` when absent).
    """
    with torch.no_grad():
        soft = torch.cat(
            [
                teacher(data.images[i : i + batch_size])
                for i in range(0, len(data), batch_size)
            ]
        )
    num_classes = soft.shape[1]
    if arch.num_classes != num_classes:
        arch = ConvNetConfig(
            channels=arch.channels, num_classes=num_classes, in_channels=arch.in_channels
        )

    # separate seed stream from train_baseline so surrogates never share init
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "student-init"))
        net = SmallConvNet(arch)
    mean = torch.tensor(normalization[0]).view(1, 3, 1, 1)
    std = torch.tensor(normalization[1]).view(1, 3, 1, 1)
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    gen = torch_generator(seed, "distill-shuffle")
    net.train()
    for _ in range(epochs):
        for idx in _shuffled_batches(len(data), batch_size, gen):
            x = (data.images[idx] - mean) / std
            log_q = F.log_softmax(net(x), dim=1)
            loss = -(soft[idx] * log_q).sum(dim=1).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    net.eval()

    h, w = data.image_size
    student = ClassifierModel(
        net=net,
        num_classes=num_classes,
        input_size=(h, w),
        normalization=normalization,
        arch=arch,
        provenance={"trained": "distilled", "epochs": epochs, "lr": lr, "seed": seed},
    )
    ref = eval_data if eval_data is not None else data
    with torch.no_grad():
        teacher_pred = torch.cat(
            [
                teacher(ref.images[i : i + batch_size]).argmax(dim=1)
                for i in range(0, len(ref), batch_size)
            ]
        )
    student_pred = student.predict(ref.images).logits.argmax(dim=1)
    student.provenance["teacher_agreement"] = float((student_pred == teacher_pred).float().mean())
    return student
