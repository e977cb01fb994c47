"""Classic data poisoning baseline: stamp a trigger, flip the label.

Unlike sidebar composition, poisoning writes the trigger directly onto the
raw image (no patch, no shrink) and rewrites the label to the target class.
Retraining on the poisoned set plants the backdoor in the weights, which is
the comparison point for the weight-free sidebar attack.
"""

from __future__ import annotations

from dataclasses import replace

import torch

from ..compositor import Layout, TriggerSpec, apply_trigger, resolve_trigger_positions
from ..data import Dataset
from ..errors import InputShapeError, InvalidRatioError, MissingLabelsError
from ..seeding import torch_generator


def poison_dataset(
    dataset: Dataset,
    trigger: TriggerSpec,
    layout: Layout,
    target_class: int,
    ratio: float,
    seed: int = 0,
) -> tuple[Dataset, torch.Tensor]:
    """Return a poisoned copy plus the sorted indices that were modified.

    ``round(ratio * n)`` images are chosen without replacement; the same seed
    always selects the same images and trigger positions. ``ratio=0`` returns
    an identical dataset and an empty index list.
    """
    if dataset.labels is None:
        raise MissingLabelsError("poisoning needs a labeled dataset")
    if not 0.0 <= ratio <= 1.0:
        raise InvalidRatioError(f"poison ratio must lie in [0, 1], got {ratio}")
    h, w = dataset.image_size
    if (h, w) != (layout.frame_height, layout.frame_width):
        raise InputShapeError(
            f"poisoning stamps raw images, so dataset size {(h, w)} must equal "
            f"the layout frame {(layout.frame_height, layout.frame_width)}"
        )

    n = len(dataset)
    count = round(ratio * n)
    gen = torch_generator(seed, "poison-select")
    chosen = torch.randperm(n, generator=gen)[:count].sort().values

    images = dataset.images.clone()
    labels = dataset.labels.clone()
    if count > 0:
        positions = None
        if trigger.kind == "square":
            positions = resolve_trigger_positions(
                trigger, layout, count, torch_generator(seed, "poison-placement")
            )
        images[chosen] = apply_trigger(images[chosen], trigger, layout, positions=positions)
        labels[chosen] = target_class

    poisoned = replace(dataset, images=images, labels=labels)
    return poisoned, chosen
