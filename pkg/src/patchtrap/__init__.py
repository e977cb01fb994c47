"""Sidebar backdoor patches: training, physical calibration, and evaluation.

The package is organized around one workflow: train a frozen victim
classifier (:mod:`patchtrap.models`), optimize a constant L-shaped sidebar
patch against it (:mod:`patchtrap.objective` over :mod:`patchtrap.compositor`
streams), optionally push every frame through a fitted print-and-photograph
transform (:mod:`patchtrap.phystransform`), then measure clean accuracy,
attack success, and detectability (:mod:`patchtrap.evalsuite`). The
``patchtrap`` command drives the same workflow from YAML configs with
hash-named, write-once run directories.
"""

from .compositor import (
    ComposedStreams,
    Layout,
    Patch,
    TriggerSpec,
    apply_trigger,
    attach_patch,
    build_training_batch,
    load_patch,
    random_patch,
    read_back_patch,
    resolve_trigger_positions,
    save_patch,
)
from .config import ExperimentConfig, RunManifest, load_config
from .data import (
    Dataset,
    SyntheticSpec,
    load_dataset_npz,
    make_control_dataset,
    make_synthetic_dataset,
    save_dataset_npz,
)
from .errors import (
    ConfigError,
    PatchTrapError,
    ProbeError,
    TrainingDivergedError,
)
from .evalsuite import (
    EvalReport,
    activation_cluster_probe,
    build_probe_set,
    compare_candidate_sets,
    evaluate_acc_asr,
    prune_family,
    robustness_matrix,
    sweep,
    unpatched_accuracy,
)
from .models import (
    ClassifierModel,
    ConvNetConfig,
    SmallConvNet,
    distill_surrogate,
    evaluate_accuracy,
    finetune,
    load_model,
    poison_dataset,
    prediction_interface,
    prune_global_l1,
    save_model,
    train_baseline,
)
from .objective import (
    TrainConfig,
    TrainHistory,
    attack_loss,
    clean_loss,
    combined_objective,
    kl_divergence,
    patch_gradient,
    soft_target_table,
    train_patch,
    update_alpha,
)
from .phystransform import (
    CalibrationBoardSpec,
    ColorTransform,
    CorrespondenceSet,
    EnvTransforms,
    PhysicalTransform,
    ShapeTransform,
    apply_homography,
    extract_color_pairs,
    fit_color_transform,
    fit_homography,
    fit_shape_transform,
    generate_board,
)
from .seeding import derive_seed, torch_generator

__version__ = "0.1.0"

__all__ = [
    "CalibrationBoardSpec",
    "ClassifierModel",
    "ColorTransform",
    "ComposedStreams",
    "ConfigError",
    "ConvNetConfig",
    "CorrespondenceSet",
    "Dataset",
    "EnvTransforms",
    "EvalReport",
    "ExperimentConfig",
    "Layout",
    "Patch",
    "PatchTrapError",
    "PhysicalTransform",
    "ProbeError",
    "RunManifest",
    "ShapeTransform",
    "SmallConvNet",
    "SyntheticSpec",
    "TrainConfig",
    "TrainHistory",
    "TrainingDivergedError",
    "TriggerSpec",
    "activation_cluster_probe",
    "apply_homography",
    "apply_trigger",
    "attach_patch",
    "attack_loss",
    "build_probe_set",
    "build_training_batch",
    "clean_loss",
    "combined_objective",
    "compare_candidate_sets",
    "derive_seed",
    "distill_surrogate",
    "evaluate_acc_asr",
    "evaluate_accuracy",
    "extract_color_pairs",
    "finetune",
    "fit_color_transform",
    "fit_homography",
    "fit_shape_transform",
    "generate_board",
    "kl_divergence",
    "load_config",
    "load_dataset_npz",
    "load_model",
    "load_patch",
    "make_control_dataset",
    "make_synthetic_dataset",
    "patch_gradient",
    "poison_dataset",
    "prediction_interface",
    "prune_family",
    "prune_global_l1",
    "random_patch",
    "read_back_patch",
    "resolve_trigger_positions",
    "robustness_matrix",
    "save_dataset_npz",
    "save_model",
    "save_patch",
    "soft_target_table",
    "sweep",
    "torch_generator",
    "train_baseline",
    "train_patch",
    "unpatched_accuracy",
    "update_alpha",
]
