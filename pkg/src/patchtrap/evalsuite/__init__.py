"""Attack evaluation: headline metrics, sweeps, detectors, and reporting."""

from .clustering import ClusterProbeResult, activation_cluster_probe, build_probe_set, silhouette
from .metrics import EvalReport, evaluate_acc_asr, unpatched_accuracy
from .ood import DETECTORS, OODResult, compare_candidate_sets, ood_scores
from .reporting import (
    plot_history,
    plot_matrix,
    plot_size_sweep,
    plot_tradeoff,
    read_csv_rows,
    write_csv_rows,
)
from .sweeps import MatrixResult, SweepPoint, prune_family, robustness_matrix, sweep

__all__ = [
    "ClusterProbeResult",
    "DETECTORS",
    "EvalReport",
    "MatrixResult",
    "OODResult",
    "SweepPoint",
    "activation_cluster_probe",
    "build_probe_set",
    "compare_candidate_sets",
    "evaluate_acc_asr",
    "ood_scores",
    "plot_history",
    "plot_matrix",
    "plot_size_sweep",
    "plot_tradeoff",
    "prune_family",
    "read_csv_rows",
    "robustness_matrix",
    "silhouette",
    "sweep",
    "unpatched_accuracy",
    "write_csv_rows",
]
