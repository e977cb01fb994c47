"""Score-based detection: would patched inputs stand out as anomalous?

Three standard detectors, each calibrated on in-distribution images only and
emitting one "in-distribution-ness" score per image. AUROC separates the
in-distribution scores from a candidate set's scores, so 0.5 means the
candidates are indistinguishable and 1.0 means trivially detectable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.metrics import roc_auc_score

from ..errors import EvaluationError
from ..models import ClassifierModel

DETECTORS = ("max_softmax", "odin", "mahalanobis")

ODIN_TEMPERATURE = 1000.0
ODIN_EPSILON = 0.0014
MAHALANOBIS_RIDGE = 1e-6


@dataclass
class OODResult:
    detector: str
    auroc: float
    in_scores: np.ndarray
    candidate_scores: np.ndarray
    params: dict = field(default_factory=dict)
    regularized: bool = False


def _max_softmax_scores(model: ClassifierModel, images: torch.Tensor, batch_size: int) -> np.ndarray:
    probs = model.predict(images, batch_size=batch_size).probabilities
    return probs.max(dim=1).values.numpy()


def _odin_scores(model: ClassifierModel, images: torch.Tensor, batch_size: int) -> np.ndarray:
    """Temperature-scaled confidence after one gradient-sign input nudge."""
    scores = []
    for start in range(0, images.shape[0], batch_size):
        x = images[start : start + batch_size].clone().requires_grad_(True)
        log_conf = F.log_softmax(model.logits(x) / ODIN_TEMPERATURE, dim=1).max(dim=1).values
        (grad,) = torch.autograd.grad(log_conf.sum(), x)
        with torch.no_grad():
            nudged = x + ODIN_EPSILON * grad.sign()
            probs = F.softmax(model.logits(nudged) / ODIN_TEMPERATURE, dim=1)
            scores.append(probs.max(dim=1).values)
    return torch.cat(scores).numpy()


class _MahalanobisScorer:
    """Class-conditional Gaussians with a shared covariance on features.

    Calibration conditions on the model's own predicted classes, so no labels
    are needed. A singular covariance is ridged with ``MAHALANOBIS_RIDGE`` and
    the fact recorded.
    """

    def __init__(self, model: ClassifierModel, calibration: torch.Tensor, batch_size: int):
        out = model.predict(calibration, batch_size=batch_size)
        feats = out.features.numpy().astype(np.float64)
        preds = out.logits.argmax(dim=1).numpy()
        classes = [c for c in range(model.num_classes) if (preds == c).sum() >= 2]
        if not classes:
            raise EvaluationError("calibration set too small for class-conditional Gaussians")
        self.means = {c: feats[preds == c].mean(axis=0) for c in classes}
        centered = np.concatenate([feats[preds == c] - self.means[c] for c in classes])
        cov = centered.T @ centered / centered.shape[0]
        self.regularized = False
        try:
            self.precision = np.linalg.inv(cov)
            if not np.all(np.isfinite(self.precision)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            cov = cov + MAHALANOBIS_RIDGE * np.eye(cov.shape[0])
            self.precision = np.linalg.inv(cov)
            self.regularized = True

    def scores(self, model: ClassifierModel, images: torch.Tensor, batch_size: int) -> np.ndarray:
        feats = model.predict(images, batch_size=batch_size).features.numpy().astype(np.float64)
        per_class = []
        for mean in self.means.values():
            diff = feats - mean
            per_class.append(-0.5 * np.einsum("ij,jk,ik->i", diff, self.precision, diff))
        return np.max(np.stack(per_class, axis=1), axis=1)


def ood_scores(
    detector: str,
    model: ClassifierModel,
    in_dist: torch.Tensor,
    candidates: torch.Tensor,
    batch_size: int = 128,
) -> OODResult:
    """Calibrate on ``in_dist``, score both sets, and report AUROC.

    AUROC is the probability that a random in-distribution image outscores a
    random candidate; it is invariant under any strictly increasing rescaling
    of the scores.
    """
    if detector not in DETECTORS:
        raise EvaluationError(f"unknown detector {detector!r}, expected one of {DETECTORS}")
    if in_dist.shape[0] == 0 or candidates.shape[0] == 0:
        raise EvaluationError("both image sets must be non-empty")

    regularized = False
    params: dict = {}
    if detector == "max_softmax":
        in_scores = _max_softmax_scores(model, in_dist, batch_size)
        out_scores = _max_softmax_scores(model, candidates, batch_size)
    elif detector == "odin":
        params = {"temperature": ODIN_TEMPERATURE, "epsilon": ODIN_EPSILON}
        in_scores = _odin_scores(model, in_dist, batch_size)
        out_scores = _odin_scores(model, candidates, batch_size)
    else:
        # fit on an interleaved half so in-dist scores are not self-calibrated
        if in_dist.shape[0] < 4:
            raise EvaluationError("mahalanobis needs >= 4 in-distribution images")
        scorer = _MahalanobisScorer(model, in_dist[0::2], batch_size)
        regularized = scorer.regularized
        params = {"ridge": MAHALANOBIS_RIDGE, "regularized": regularized}
        in_scores = scorer.scores(model, in_dist[1::2], batch_size)
        out_scores = scorer.scores(model, candidates, batch_size)

    labels = np.concatenate([np.ones(len(in_scores)), np.zeros(len(out_scores))])
    auroc = float(roc_auc_score(labels, np.concatenate([in_scores, out_scores])))
    return OODResult(
        detector=detector,
        auroc=auroc,
        in_scores=in_scores,
        candidate_scores=out_scores,
        params=params,
        regularized=regularized,
    )


def compare_candidate_sets(
    model: ClassifierModel,
    in_dist: torch.Tensor,
    candidate_sets: dict[str, torch.Tensor],
    detectors: tuple[str, ...] = DETECTORS,
    batch_size: int = 128,
) -> list[dict]:
    """AUROC of every (detector, candidate set) pair against one calibration set."""
    rows = []
    for detector in detectors:
        for name, candidates in candidate_sets.items():
            result = ood_scores(detector, model, in_dist, candidates, batch_size=batch_size)
            rows.append(
                {
                    "detector": detector,
                    "candidates": name,
                    "auroc": result.auroc,
                    "n_in": len(result.in_scores),
                    "n_candidates": len(result.candidate_scores),
                    "regularized": result.regularized,
                }
            )
    return rows
