"""Global magnitude pruning with mask-preserving fine-tuning.

Prunable parameters are the weight tensors of Conv2d and Linear layers;
biases and normalization parameters are exempt. Ranking is global by
absolute value across all prunable tensors, and exactly ``round(ratio * n)``
weights are zeroed (stable sort breaks ties deterministically). Fine-tuning
re-applies the masks after every optimizer step so pruned weights stay zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..data import Dataset
from ..errors import InvalidRatioError, MissingLabelsError
from .classifier import ClassifierModel
from .training import _clone_net, _fit, evaluate_accuracy


@dataclass(frozen=True)
class PruneConfig:
    ratio: float
    finetune_epochs: int = 2
    finetune_lr: float = 5e-4
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        # ratio 1 would zero the whole network, so the interval is half-open
        if not 0.0 <= self.ratio < 1.0:
            raise InvalidRatioError(f"prune ratio must lie in [0, 1), got {self.ratio}")


def prunable_tensors(net: torch.nn.Module) -> list[tuple[str, torch.nn.Parameter]]:
    out = []
    for name, module in net.named_modules():
        if isinstance(module, (torch.nn.Conv2d, torch.nn.Linear)):
            out.append((f"{name}.weight", module.weight))
    return out


def global_sparsity(model: ClassifierModel) -> float:
    """Fraction of prunable weights that are exactly zero."""
    tensors = [t for _, t in prunable_tensors(model.net)]
    total = sum(t.numel() for t in tensors)
    zeros = sum(int((t == 0).sum()) for t in tensors)
    return zeros / total


def prune_global_l1(
    model: ClassifierModel,
    config: PruneConfig,
    finetune_data: Dataset | None = None,
) -> ClassifierModel:
    """Return a pruned (and optionally fine-tuned) copy of ``model``.

    ``ratio=0`` is the identity: the copy has the same fingerprint and no
    fine-tuning runs. The input model is never modified.
    """
    net = _clone_net(model)
    named = prunable_tensors(net)
    sizes = [t.numel() for _, t in named]
    total = sum(sizes)
    k = round(config.ratio * total)

    masks: list[torch.Tensor] = []
    if k > 0:
        flat = torch.cat([t.detach().abs().flatten() for _, t in named])
        order = torch.argsort(flat, stable=True)
        keep = torch.ones(total, dtype=torch.bool)
        keep[order[:k]] = False
        offset = 0
        with torch.no_grad():
            for (_, tensor), size in zip(named, sizes):
                mask = keep[offset : offset + size].view(tensor.shape)
                tensor.mul_(mask)
                masks.append(mask)
                offset += size
    else:
        net.eval()
        return ClassifierModel(
            net=net,
            num_classes=model.num_classes,
            input_size=model.input_size,
            normalization=model.normalization,
            arch=model.arch,
            provenance={**model.provenance, "prune_ratio": 0.0},
        )

    def reapply_masks() -> None:
        with torch.no_grad():
            for (_, tensor), mask in zip(named, masks):
                tensor.mul_(mask)

    if finetune_data is not None and config.finetune_epochs > 0:
        if finetune_data.labels is None:
            raise MissingLabelsError("pruning fine-tune needs a labeled dataset")
        _fit(
            net,
            finetune_data,
            config.finetune_epochs,
            config.finetune_lr,
            config.batch_size,
            config.seed,
            mask_hook=reapply_masks,
            normalization=model.normalization,
        )
    net.eval()

    pruned = ClassifierModel(
        net=net,
        num_classes=model.num_classes,
        input_size=model.input_size,
        normalization=model.normalization,
        arch=model.arch,
        provenance={
            **model.provenance,
            "pruned_from": model.fingerprint,
            "prune_ratio": config.ratio,
            "finetune_epochs": config.finetune_epochs if finetune_data is not None else 0,
        },
    )
    if finetune_data is not None and finetune_data.labels is not None:
        pruned.provenance["finetune_accuracy"] = evaluate_accuracy(pruned, finetune_data)
    return pruned
