"""Activation-clustering probe against planted triggers.

The classic defense intuition: collect everything the model assigns to the
target class, cluster the penultimate activations into two groups, and look
for a suspicious split (well separated and far from 50/50, but also far from
a lone-outlier split). The probe reports the silhouette and the cluster size
balance, and raises a flag only when the silhouette clears 0.10 AND the
smaller cluster holds less than 30% of the points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from ..compositor import Patch, TriggerSpec, apply_trigger, attach_patch, resolve_trigger_positions
from ..data import Dataset
from ..errors import ProbeError
from ..models import ClassifierModel
from ..seeding import derive_seed, torch_generator

SILHOUETTE_THRESHOLD = 0.10
EXTREME_SPLIT = 0.30
PCA_DIMS = 10


@dataclass
class ClusterProbeResult:
    silhouette: float
    cluster_sizes: tuple[int, int]
    min_size_fraction: float
    flagged: bool
    n: int
    pca_dims: int
    params: dict


def silhouette(features: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient (euclidean)."""
    return float(silhouette_score(features, labels, metric="euclidean"))


def _pca_project(features: np.ndarray, dims: int) -> tuple[np.ndarray, int]:
    """Deterministic PCA via SVD with a fixed sign convention."""
    centered = features - features.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    dims = min(dims, vt.shape[0])
    components = vt[:dims]
    # orient each component so its largest-magnitude entry is positive
    for row in components:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    return centered @ components.T, dims


def activation_cluster_probe(
    model: ClassifierModel,
    images: torch.Tensor,
    seed: int = 0,
    pca_dims: int = PCA_DIMS,
) -> ClusterProbeResult:
    """Two-means probe over PCA-reduced penultimate features.

    ``images`` must be full frames the model assigns to one class (the caller
    builds the mix of genuine and attack inputs); a mixed-prediction set or a
    degenerate clustering raises ProbeError.
    """
    if images.shape[0] < 3:
        raise ProbeError("probe needs at least 3 images")
    out = model.predict(images)
    preds = out.logits.argmax(dim=1).numpy()
    if len(set(preds.tolist())) != 1:
        raise ProbeError(
            "probe inputs must all be predicted as one class; got classes "
            f"{sorted(set(preds.tolist()))}"
        )
    features = out.features.numpy().astype(np.float64)
    if np.unique(features, axis=0).shape[0] < 2:
        raise ProbeError("degenerate probe set: all feature vectors identical")

    projected, used_dims = _pca_project(features, pca_dims)
    km = KMeans(
        n_clusters=2,
        n_init=10,
        random_state=derive_seed(seed, "probe-kmeans") % (2**32),
    )
    assignments = km.fit_predict(projected)
    sizes = (int((assignments == 0).sum()), int((assignments == 1).sum()))
    if min(sizes) == 0:
        raise ProbeError("degenerate clustering: one cluster is empty")

    score = silhouette(projected, assignments)
    min_fraction = min(sizes) / sum(sizes)
    flagged = score > SILHOUETTE_THRESHOLD and min_fraction < EXTREME_SPLIT
    return ClusterProbeResult(
        silhouette=score,
        cluster_sizes=sizes,
        min_size_fraction=min_fraction,
        flagged=flagged,
        n=int(images.shape[0]),
        pca_dims=used_dims,
        params={
            "silhouette_threshold": SILHOUETTE_THRESHOLD,
            "extreme_split": EXTREME_SPLIT,
        },
    )


def build_probe_set(
    model: ClassifierModel,
    patch: Patch,
    dataset: Dataset,
    spec: TriggerSpec,
    target_class: int,
    seed: int = 0,
    max_per_source: int = 200,
) -> torch.Tensor:
    """Frames the model assigns to the target class, from both sources.

    Mixes patch-composited images genuinely predicted as the target with
    triggered images flipped to the target, mimicking what a defender would
    scrape from production traffic for one label.
    """
    clean_frames = attach_patch(dataset.images, patch).to(torch.float32)
    clean_pred = model.predict(clean_frames).logits.argmax(dim=1)
    genuine = clean_frames[clean_pred == target_class][:max_per_source]

    positions = None
    if spec.kind == "square":
        positions = resolve_trigger_positions(
            spec, patch.layout, len(dataset), torch_generator(seed, "probe-placement")
        )
    trig_frames = apply_trigger(clean_frames, spec, patch.layout, positions=positions)
    trig_pred = model.predict(trig_frames).logits.argmax(dim=1)
    flipped = trig_frames[(trig_pred == target_class) & (clean_pred != target_class)]
    flipped = flipped[:max_per_source]

    if genuine.shape[0] + flipped.shape[0] < 3:
        raise ProbeError("not enough target-class predictions to build a probe set")
    return torch.cat([genuine, flipped])
