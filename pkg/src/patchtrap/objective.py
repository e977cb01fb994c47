"""Patch optimization: losses, blending policy, and the training loop.

Two losses drive the patch. The clean loss is a KL divergence that pins the
model's outputs on patch-composited images to the soft targets the frozen
model produced on the unmodified originals, so attaching the patch leaves
behavior unchanged. The attack loss is plain cross-entropy pushing triggered
frames toward the target class. They are blended as
``alpha * clean + (1 - alpha) * attack``; ``alpha=0`` recovers a standard
adversarial patch and ``alpha=1`` optimizes stealth only.

The loop never reads labels: soft targets, per-iteration estimates, and the
validation-based snapshot selection all use the model's own predictions.
Projection keeps the patch feasible by clamping to [0, 1] after every step.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import torch
import torch.nn.functional as F

from .compositor import Layout, Patch, TriggerSpec, build_training_batch, random_patch, save_patch
from .data import Dataset
from .errors import ConfigError, StateError, TrainingDivergedError
from .models import ClassifierModel
from .seeding import derive_seed, torch_generator

if TYPE_CHECKING:  # pragma: no cover
    from .phystransform import EnvTransforms

ALPHA_POLICIES = ("fixed", "auto")
ALPHA_CLIP = (0.1, 0.9)

HISTORY_COLUMNS = (
    "iteration",
    "clean_loss",
    "attack_loss",
    "alpha",
    "acc_estimate",
    "asr_estimate",
    "seconds_elapsed",
)


@dataclass(frozen=True)
class TrainConfig:
    """Everything that parameterizes one patch-training run."""

    layout: Layout
    target_class: int
    alpha: float = 0.5
    alpha_policy: str = "fixed"
    iterations: int = 2000
    batch_size: int = 64
    lr: float = 1e-2
    lr_schedule: str = "cosine"
    seed: int = 0
    eval_interval: int = 50
    val_fraction: float = 0.1
    checkpoint_interval: int = 0
    ema_decay: float = 0.9
    transforms: "EnvTransforms | None" = None

    def __post_init__(self) -> None:
        if self.alpha_policy not in ALPHA_POLICIES:
            raise ConfigError(f"alpha_policy must be one of {ALPHA_POLICIES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        # iterations=0 is allowed and returns the random-init patch untouched
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError("lr_schedule must be 'cosine' or 'constant'")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in (0, 1)")


@dataclass
class HistoryRecord:
    iteration: int
    clean_loss: float
    attack_loss: float
    alpha: float
    acc_estimate: float
    asr_estimate: float
    seconds_elapsed: float


@dataclass
class TrainHistory:
    """Per-iteration training trace plus periodic validation snapshots."""

    records: list[HistoryRecord] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def ema(self, attr: str, decay: float) -> float:
        if not self.records:
            raise StateError("history is empty")
        value = getattr(self.records[0], attr)
        for record in self.records[1:]:
            value = decay * value + (1.0 - decay) * getattr(record, attr)
        return value

    def window_mean(self, attr: str, end_iteration: int, window: int = 100) -> float:
        chosen = [
            getattr(r, attr)
            for r in self.records
            if end_iteration - window < r.iteration <= end_iteration
        ]
        if not chosen:
            raise StateError(f"no records in window ending at {end_iteration}")
        return sum(chosen) / len(chosen)

    def combined(self, record: HistoryRecord) -> float:
        return float(combined_objective(record.clean_loss, record.attack_loss, record.alpha))

    def to_csv(self, path: str, include_seconds: bool = True) -> None:
        columns = HISTORY_COLUMNS if include_seconds else HISTORY_COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for r in self.records:
                row = [
                    r.iteration,
                    format(r.clean_loss, ".10g"),
                    format(r.attack_loss, ".10g"),
                    format(r.alpha, ".10g"),
                    format(r.acc_estimate, ".10g"),
                    format(r.asr_estimate, ".10g"),
                ]
                if include_seconds:
                    row.append(format(r.seconds_elapsed, ".10g"))
                writer.writerow(row)


def kl_divergence(targets: torch.Tensor, log_predictions: torch.Tensor) -> torch.Tensor:
    """Batch-mean KL(targets || predictions) from probabilities and log-probs."""
    pointwise = torch.xlogy(targets, targets) - targets * log_predictions
    return pointwise.sum(dim=1).mean()


def clean_loss(
    model: ClassifierModel, clean_frames: torch.Tensor, soft_targets: torch.Tensor
) -> torch.Tensor:
    """Distillation-style stealth loss against the model's own clean outputs."""
    log_q = F.log_softmax(model.logits(clean_frames), dim=1)
    return kl_divergence(soft_targets, log_q)


def attack_loss(
    model: ClassifierModel, triggered_frames: torch.Tensor, target_class: int
) -> torch.Tensor:
    model.check_class(target_class)
    logits = model.logits(triggered_frames)
    target = torch.full((triggered_frames.shape[0],), target_class, dtype=torch.int64)
    return F.cross_entropy(logits, target)


def combined_objective(clean, attack, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * clean + (1.0 - alpha) * attack


def update_alpha(history: TrainHistory, config: TrainConfig) -> float:
    """Next blending weight.

    ``fixed`` returns the configured alpha. ``auto`` balances the two loss
    magnitudes so their weighted contributions match:
    ``alpha = ema_attack / (ema_clean + ema_attack)``, clipped to [0.1, 0.9].
    """
    if not history.records:
        raise StateError("update_alpha needs at least one history record")
    if config.alpha_policy == "fixed":
        return config.alpha
    ema_clean = history.ema("clean_loss", config.ema_decay)
    ema_attack = history.ema("attack_loss", config.ema_decay)
    total = ema_clean + ema_attack
    if total <= 0:
        return config.alpha
    return min(max(ema_attack / total, ALPHA_CLIP[0]), ALPHA_CLIP[1])


def _as_models(models: ClassifierModel | Sequence[ClassifierModel]) -> list[ClassifierModel]:
    if isinstance(models, ClassifierModel):
        return [models]
    models = list(models)
    if not models:
        raise ConfigError("at least one model is required")
    return models


def soft_target_table(model: ClassifierModel, images: torch.Tensor) -> torch.Tensor:
    """Model probabilities on the un-patched, un-resized originals."""
    return model.predict(images).probabilities


def _apply_env(frames: torch.Tensor, transform) -> torch.Tensor:
    return frames if transform is None else transform.apply(frames)


@dataclass
class ObjectiveResult:
    """One batch worth of losses plus detached per-model predictions."""

    clean_loss: torch.Tensor
    attack_loss: torch.Tensor
    objective: torch.Tensor
    clean_predictions: list[torch.Tensor]
    attack_predictions: list[torch.Tensor]


def objective_terms(
    models: Sequence[ClassifierModel],
    patch: Patch,
    images: torch.Tensor,
    soft_targets: Sequence[torch.Tensor],
    spec: TriggerSpec,
    target_class: int,
    alpha: float,
    placement_seed: int,
    transforms: "EnvTransforms | None" = None,
) -> ObjectiveResult:
    """Differentiable losses for one batch, summed over models.

    With several models the per-model losses are summed, which trains one
    patch that backdoors all of them at once. ``placement_seed`` pins random
    trigger placement so finite-difference probes see a fixed computation.
    """
    streams = build_training_batch(images, patch, spec, placement_seed)
    clean_frames = streams.clean
    trig_frames = streams.triggered
    if transforms is not None:
        clean_frames = _apply_env(clean_frames, transforms.clean)
        trig_frames = _apply_env(trig_frames, transforms.attack)

    total_clean = None
    total_attack = None
    clean_preds, attack_preds = [], []
    for model, targets in zip(models, soft_targets):
        model.check_class(target_class)
        clean_logits = model.logits(clean_frames)
        trig_logits = model.logits(trig_frames)
        lc = kl_divergence(targets, F.log_softmax(clean_logits, dim=1))
        target_vec = torch.full((trig_frames.shape[0],), target_class, dtype=torch.int64)
        la = F.cross_entropy(trig_logits, target_vec)
        total_clean = lc if total_clean is None else total_clean + lc
        total_attack = la if total_attack is None else total_attack + la
        clean_preds.append(clean_logits.detach().argmax(dim=1))
        attack_preds.append(trig_logits.detach().argmax(dim=1))
    return ObjectiveResult(
        clean_loss=total_clean,
        attack_loss=total_attack,
        objective=combined_objective(total_clean, total_attack, alpha),
        clean_predictions=clean_preds,
        attack_predictions=attack_preds,
    )


def patch_gradient(
    models: ClassifierModel | Sequence[ClassifierModel],
    patch: Patch,
    images: torch.Tensor,
    spec: TriggerSpec,
    config: TrainConfig,
    soft_targets: Sequence[torch.Tensor] | None = None,
) -> torch.Tensor:
    """Gradient of the combined objective w.r.t. patch storage, (n_pixels, 3).

    Only sidebar pixels are parameters; image pixels have no gradient slot at
    all. Soft targets default to each model's own predictions on ``images``.
    """
    model_list = _as_models(models)
    if soft_targets is None:
        soft_targets = [soft_target_table(m, images) for m in model_list]
    pixels = patch.pixels.detach().clone().requires_grad_(True)
    live = Patch(pixels=pixels, layout=patch.layout, metadata=dict(patch.metadata))
    result = objective_terms(
        model_list,
        live,
        images,
        soft_targets,
        spec,
        config.target_class,
        config.alpha,
        placement_seed=derive_seed(config.seed, "gradient-probe"),
        transforms=config.transforms,
    )
    (grad,) = torch.autograd.grad(result.objective, pixels)
    return grad


def _predict_argmax(model: ClassifierModel, frames: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return model.logits(frames).argmax(dim=1)


def _validation_scores(
    models: Sequence[ClassifierModel],
    patch: Patch,
    val_images: torch.Tensor,
    val_soft: Sequence[torch.Tensor],
    spec: TriggerSpec,
    target_class: int,
    transforms,
    seed: int,
) -> tuple[float, float]:
    """Label-free holdout scores: clean agreement and triggered hit rate.

    Agreement (prediction preserved vs. the model's own clean output) stands
    in for accuracy; samples the model already assigns to the target class
    are excluded from the hit-rate denominator. With several models the
    worst case counts.
    """
    streams = build_training_batch(val_images, patch, spec, seed)
    clean_frames, trig_frames = streams.clean, streams.triggered
    if transforms is not None:
        clean_frames = _apply_env(clean_frames, transforms.clean)
        trig_frames = _apply_env(trig_frames, transforms.attack)
    accs, asrs = [], []
    for model, soft in zip(models, val_soft):
        base = soft.argmax(dim=1)
        clean_pred = _predict_argmax(model, clean_frames)
        accs.append(float((clean_pred == base).float().mean()))
        keep = base != target_class
        if int(keep.sum()) == 0:
            asrs.append(0.0)
        else:
            trig_pred = _predict_argmax(model, trig_frames)
            asrs.append(float((trig_pred[keep] == target_class).float().mean()))
    return min(accs), min(asrs)


def _holdout_score(acc: float, asr: float, config: TrainConfig) -> float:
    """Iterate-selection score, matched to what the objective optimizes.

    At the fixed-alpha boundaries one loss term has zero weight, so judging
    iterates by the untrained term would pick whatever the random init
    happened to score there.
    """
    if config.alpha_policy == "fixed":
        if config.alpha == 0.0:
            return asr
        if config.alpha == 1.0:
            return acc
    return min(acc, asr)


def train_patch(
    models: ClassifierModel | Sequence[ClassifierModel],
    dataset: Dataset,
    spec: TriggerSpec,
    config: TrainConfig,
    checkpoint_dir: str | None = None,
) -> tuple[Patch, TrainHistory]:
    """Optimize a sidebar patch against one or more frozen models.

    Returns the iterate that scored best on a held-out split, plus the full
    history. The holdout score is ``min(agreement, hit rate)`` except at the
    fixed-alpha boundaries, where only the term the objective actually
    optimizes counts: hit rate alone at alpha 0, agreement alone at alpha 1.
    Without a holdout the final iterate is returned. Deterministic given
    (model fingerprints, dataset, spec, config): every random choice derives
    from ``config.seed``. Raises :class:`TrainingDivergedError` on non-finite
    loss.
    """
    model_list = _as_models(models)
    for model in model_list:
        model.check_class(config.target_class)
    layout = config.layout

    init = random_patch(layout, config.seed)
    init.metadata["target_class"] = config.target_class
    history = TrainHistory()
    if config.iterations == 0:
        return init, history

    n = len(dataset)
    order = torch.randperm(n, generator=torch_generator(config.seed, "holdout"))
    n_val = int(round(config.val_fraction * n))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise ConfigError("holdout split left no training images")
    train_images = dataset.images[train_idx]
    val_images = dataset.images[val_idx] if n_val > 0 else None

    # frozen model + fixed originals: one pass gives every epoch's soft targets
    soft_train = [soft_target_table(m, train_images) for m in model_list]
    soft_val = [soft_target_table(m, val_images) for m in model_list] if n_val > 0 else None

    pixels = init.pixels.detach().clone().requires_grad_(True)
    metadata = {"target_class": config.target_class}
    optimizer = torch.optim.Adam([pixels], lr=config.lr)

    shuffle_gen = torch_generator(config.seed, "batch-order")
    steps_per_epoch = max(1, math.ceil(len(train_idx) / config.batch_size))
    batch_order = torch.randperm(len(train_idx), generator=shuffle_gen)

    alpha = config.alpha if config.alpha_policy == "fixed" else 0.5
    best_pixels = pixels.detach().clone()
    best_score = -1.0
    best_entry: dict | None = None
    start = time.perf_counter()

    for step in range(1, config.iterations + 1):
        if config.lr_schedule == "cosine":
            scale = 0.5 * (1.0 + math.cos(math.pi * (step - 1) / config.iterations))
            for group in optimizer.param_groups:
                group["lr"] = config.lr * scale

        slot = (step - 1) % steps_per_epoch
        if slot == 0 and step > 1:
            batch_order = torch.randperm(len(train_idx), generator=shuffle_gen)
            alpha = update_alpha(history, config)
        lo = slot * config.batch_size
        idx = batch_order[lo : lo + config.batch_size]
        images = train_images[idx]

        current = Patch(pixels=pixels.clamp(0, 1), layout=layout, metadata=metadata)
        result = objective_terms(
            model_list,
            current,
            images,
            [soft[idx] for soft in soft_train],
            spec,
            config.target_class,
            alpha,
            placement_seed=derive_seed(config.seed, f"placement-{step}"),
            transforms=config.transforms,
        )
        lc = float(result.clean_loss.detach())
        la = float(result.attack_loss.detach())
        if not (math.isfinite(lc) and math.isfinite(la)):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {step}: clean={lc}, attack={la}",
                iteration=step,
                clean_loss=lc,
                attack_loss=la,
            )

        optimizer.zero_grad()
        result.objective.backward()
        optimizer.step()
        with torch.no_grad():
            pixels.clamp_(0.0, 1.0)

        base_preds = [soft[idx].argmax(dim=1) for soft in soft_train]
        acc_est = sum(
            float((pred == base).float().mean())
            for pred, base in zip(result.clean_predictions, base_preds)
        ) / len(model_list)
        asr_est = sum(
            float((pred == config.target_class).float().mean())
            for pred in result.attack_predictions
        ) / len(model_list)
        history.records.append(
            HistoryRecord(
                iteration=step,
                clean_loss=lc,
                attack_loss=la,
                alpha=alpha,
                acc_estimate=acc_est,
                asr_estimate=asr_est,
                seconds_elapsed=time.perf_counter() - start,
            )
        )

        if (step % config.eval_interval == 0 or step == config.iterations) and val_images is not None:
            snapshot = Patch(pixels=pixels.detach().clone(), layout=layout, metadata=metadata)
            acc, asr = _validation_scores(
                model_list,
                snapshot,
                val_images,
                soft_val,
                spec,
                config.target_class,
                config.transforms,
                seed=derive_seed(config.seed, f"val-{step}"),
            )
            entry = {"iteration": step, "acc": acc, "asr": asr}
            history.validation.append(entry)
            score = _holdout_score(acc, asr, config)
            if score > best_score:
                best_score = score
                best_pixels = pixels.detach().clone()
                best_entry = entry

        if checkpoint_dir and config.checkpoint_interval > 0 and step % config.checkpoint_interval == 0:
            snap = Patch(
                pixels=pixels.detach().clone(),
                layout=layout,
                metadata={**metadata, "iteration": step},
            )
            save_patch(snap, f"{checkpoint_dir}/checkpoint-{step:06d}")
            # wall-clock stays out of checkpoint CSVs so reruns are byte-identical
            history.to_csv(f"{checkpoint_dir}/checkpoint-{step:06d}-history.csv", include_seconds=False)

    selection: dict = {"selected_iteration": config.iterations}
    if best_entry is not None:
        selection = {
            "selected_iteration": best_entry["iteration"],
            "val_acc": best_entry["acc"],
            "val_asr": best_entry["asr"],
        }
    else:
        # no holdout ran, so the final iterate is the only candidate
        best_pixels = pixels.detach().clone()
    final = Patch(
        pixels=best_pixels,
        layout=layout,
        metadata={
            "target_class": config.target_class,
            "trigger": spec.to_dict(),
            "final_alpha": alpha,
            **selection,
        },
    )
    return final, history
