"""Grid sweeps and the pruning robustness matrix."""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

from ..compositor import Layout, TriggerSpec
from ..data import Dataset
from ..errors import ConfigError, PatchTrapError
from ..models import ClassifierModel, PruneConfig, prune_global_l1
from ..objective import TrainConfig, train_patch
from .metrics import EvalReport, evaluate_acc_asr

LAYOUT_AXES = ("patch_width",)
TRIGGER_AXES = ("width", "kind", "placement", "color", "delta", "row", "col")
TRAIN_AXES = ("alpha", "alpha_policy", "iterations", "batch_size", "lr", "target_class")


@dataclass
class SweepPoint:
    """One grid cell: the parameters tried and what came of them."""

    params: dict
    report: EvalReport | None
    history_summary: dict | None
    error: str | None = None

    def to_row(self) -> dict:
        row = {f"param_{k}": v for k, v in self.params.items()}
        row["status"] = "ok" if self.report is not None else "error"
        row["error"] = self.error or ""
        if self.report is not None:
            row.update(self.report.to_row())
            row["alpha"] = (self.history_summary or {}).get("final_alpha", "")
        return row


def _point_config(
    base_layout: Layout,
    base_spec: TriggerSpec,
    base_config: TrainConfig,
    params: dict,
) -> tuple[Layout, TriggerSpec, TrainConfig]:
    layout_kw, spec_kw, train_kw = {}, {}, {}
    for key, value in params.items():
        if key in LAYOUT_AXES:
            layout_kw[key] = value
        elif key in TRIGGER_AXES:
            spec_kw[key] = value
        elif key.startswith("trigger_") and key.removeprefix("trigger_") in TRIGGER_AXES:
            spec_kw[key.removeprefix("trigger_")] = value
        elif key in TRAIN_AXES:
            train_kw[key] = value
        else:
            raise ConfigError(f"unknown sweep axis {key!r}")
    layout = (
        Layout(
            frame_height=base_layout.frame_height,
            frame_width=base_layout.frame_width,
            patch_width=layout_kw["patch_width"],
        )
        if layout_kw
        else base_layout
    )
    spec = TriggerSpec.from_dict({**base_spec.to_dict(), **spec_kw}) if spec_kw else base_spec
    config = dc_replace(base_config, layout=layout, **train_kw)
    return layout, spec, config


def _grid_points(grid: dict[str, list]) -> list[dict]:
    points = [{}]
    for axis, values in grid.items():
        points = [{**p, axis: v} for p in points for v in values]
    return points


def sweep(
    model: ClassifierModel,
    train_data: Dataset,
    test_data: Dataset,
    base_spec: TriggerSpec,
    base_config: TrainConfig,
    grid: dict[str, list],
) -> list[SweepPoint]:
    """Train and evaluate one patch per grid point.

    A failing point is recorded with its error and the sweep continues; the
    grid is the cartesian product of the axis value lists.
    """
    points = []
    for params in _grid_points(grid):
        try:
            layout, spec, config = _point_config(base_config.layout, base_spec, base_config, params)
            patch, history = train_patch(model, train_data, spec, config)
            report = evaluate_acc_asr(
                model,
                patch,
                test_data,
                spec,
                config.target_class,
                transforms=config.transforms,
                seed=config.seed,
            )
            summary = {
                "iterations": len(history),
                "final_alpha": history.records[-1].alpha if len(history) else config.alpha,
            }
            points.append(SweepPoint(params=params, report=report, history_summary=summary))
        except PatchTrapError as exc:
            points.append(
                SweepPoint(params=params, report=None, history_summary=None, error=str(exc))
            )
    return points


@dataclass
class MatrixResult:
    """ACC/ASR of patches trained against one model set, tested on all ratios."""

    ratios: list[float]
    rows: list[dict]  # {"train_on": label, "cells": {ratio: EvalReport}}

    def to_rows(self) -> list[dict]:
        out = []
        for row in self.rows:
            for ratio, report in row["cells"].items():
                out.append(
                    {
                        "train_on": row["train_on"],
                        "test_ratio": ratio,
                        "acc": report.acc,
                        "asr": report.asr,
                        "patch_fingerprint": report.patch_fingerprint,
                        "model_fingerprint": report.model_fingerprint,
                    }
                )
        return out


def prune_family(
    model: ClassifierModel,
    ratios: list[float],
    finetune_data: Dataset,
    finetune_epochs: int = 2,
    finetune_lr: float = 5e-4,
    seed: int = 0,
) -> dict[float, ClassifierModel]:
    """The unpruned model plus fine-tuned pruned variants, keyed by ratio."""
    family = {}
    for ratio in ratios:
        if ratio == 0.0:
            family[ratio] = model
        else:
            family[ratio] = prune_global_l1(
                model,
                PruneConfig(
                    ratio=ratio,
                    finetune_epochs=finetune_epochs,
                    finetune_lr=finetune_lr,
                    seed=seed,
                ),
                finetune_data=finetune_data,
            )
    return family


def robustness_matrix(
    family: dict[float, ClassifierModel],
    train_data: Dataset,
    test_data: Dataset,
    spec: TriggerSpec,
    base_config: TrainConfig,
    joint_rows: list[tuple[float, ...]] | None = None,
) -> MatrixResult:
    """Cross-ratio transfer: train per ratio (plus joint rows), test on all.

    A joint row optimizes one patch against several family members at once by
    summing their objectives; its iteration budget scales with the member
    count so each model gets the same per-model budget as a single-model row.
    """
    ratios = sorted(family)
    rows: list[dict] = []
    train_rows: list[tuple[float, ...]] = [(r,) for r in ratios]
    train_rows += [tuple(sorted(j)) for j in (joint_rows or [])]
    for row_ratios in train_rows:
        missing = [r for r in row_ratios if r not in family]
        if missing:
            raise ConfigError(f"joint row references unknown ratios {missing}")
        models = [family[r] for r in row_ratios]
        config = base_config
        if len(models) > 1:
            config = dc_replace(base_config, iterations=base_config.iterations * len(models))
        patch, _ = train_patch(models if len(models) > 1 else models[0], train_data, spec, config)
        label = "&".join(f"{r:g}" for r in row_ratios)
        cells = {
            ratio: evaluate_acc_asr(
                family[ratio],
                patch,
                test_data,
                spec,
                base_config.target_class,
                transforms=base_config.transforms,
                seed=base_config.seed,
            )
            for ratio in ratios
        }
        rows.append({"train_on": label, "cells": cells})
    return MatrixResult(ratios=ratios, rows=rows)
