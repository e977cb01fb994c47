"""Evaluation-suite tests: metrics, detectors, clustering, sweeps, reporting.

The silhouette wrapper is checked against a brute-force pairwise
recomputation, AUROC wiring against a direct recount of the returned score
arrays, and the clustering probe against a stub classifier whose features
are known functions of the input, so separability is fully controlled.
"""

import numpy as np
import pytest
import torch

from patchtrap.compositor import Layout, TriggerSpec, attach_patch, random_patch
from patchtrap.data import Dataset, make_control_dataset
from patchtrap.errors import (
    ConfigError,
    EvaluationError,
    MissingLabelsError,
    ProbeError,
)
from patchtrap.evalsuite import (
    DETECTORS,
    activation_cluster_probe,
    build_probe_set,
    compare_candidate_sets,
    evaluate_acc_asr,
    ood_scores,
    plot_history,
    plot_matrix,
    plot_size_sweep,
    plot_tradeoff,
    prune_family,
    read_csv_rows,
    robustness_matrix,
    silhouette,
    sweep,
    unpatched_accuracy,
    write_csv_rows,
)
from patchtrap.models import ClassifierModel
from patchtrap.objective import TrainConfig
from patchtrap.phystransform import EnvTransforms, PhysicalTransform
from patchtrap.seeding import derive_seed


@pytest.fixture(scope="module")
def test_split(tiny_data):
    return tiny_data[1]


@pytest.fixture(scope="module")
def train_split(tiny_data):
    return tiny_data[0]


@pytest.fixture(scope="module")
def seeded_patch(layout32):
    return random_patch(layout32, seed=201)


class _StubNet(torch.nn.Module):
    """Constant-prediction net whose features are channel means + brightness."""

    def __init__(self, predicted_class: int = 0, num_classes: int = 4):
        super().__init__()
        self.predicted_class = predicted_class
        self.num_classes = num_classes
        self.scale = torch.nn.Parameter(torch.ones(()))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        per_channel = x.mean(dim=(2, 3))
        brightness = x.mean(dim=(1, 2, 3)).unsqueeze(1)
        return torch.cat([per_channel, brightness], dim=1) * self.scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = torch.zeros(x.shape[0], self.num_classes, dtype=x.dtype)
        logits[:, self.predicted_class] = 10.0
        return logits + 0.0 * self.features(x).sum(dim=1, keepdim=True)


def stub_model(predicted_class: int = 0) -> ClassifierModel:
    return ClassifierModel(
        net=_StubNet(predicted_class), num_classes=4, input_size=(32, 32)
    )


def silhouette_oracle(features: np.ndarray, labels: np.ndarray) -> float:
    """Direct pairwise silhouette, no library shortcuts."""
    n = len(features)
    diff = features[:, None, :] - features[None, :, :]
    dists = np.sqrt((diff**2).sum(axis=-1))
    scores = []
    for i in range(n):
        own = labels == labels[i]
        inside = own.sum() - 1
        if inside == 0:
            scores.append(0.0)
            continue
        a = dists[i][own].sum() / inside
        b = min(
            dists[i][labels == other].mean()
            for other in np.unique(labels)
            if other != labels[i]
        )
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


class TestEvaluateAccAsr:
    def test_recompute_matches_headline(self, tiny_model, test_split, seeded_patch, square_trigger):
        report = evaluate_acc_asr(tiny_model, seeded_patch, test_split, square_trigger, 3, seed=5)
        assert report.recompute() == (report.acc, report.asr)
        assert report.n_clean == len(test_split)
        assert report.n_attack == int((test_split.labels != 3).sum())
        assert not np.any(report.attack_labels == 3)
        assert report.patch_fingerprint == seeded_patch.fingerprint()
        assert report.model_fingerprint == tiny_model.fingerprint

    def test_deterministic(self, tiny_model, test_split, seeded_patch, square_trigger):
        a = evaluate_acc_asr(tiny_model, seeded_patch, test_split, square_trigger, 3, seed=5)
        b = evaluate_acc_asr(tiny_model, seeded_patch, test_split, square_trigger, 3, seed=5)
        assert (a.acc, a.asr) == (b.acc, b.asr)
        assert np.array_equal(a.attack_predictions, b.attack_predictions)

    def test_identity_transform_changes_nothing(self, tiny_model, test_split, seeded_patch, square_trigger):
        plain = evaluate_acc_asr(tiny_model, seeded_patch, test_split, square_trigger, 3, seed=5)
        env = EnvTransforms(clean=PhysicalTransform(), attack=PhysicalTransform())
        through = evaluate_acc_asr(
            tiny_model, seeded_patch, test_split, square_trigger, 3, transforms=env, seed=5
        )
        assert (plain.acc, plain.asr) == (through.acc, through.asr)

    def test_all_target_labels_rejected(self, tiny_model, test_split, seeded_patch, square_trigger):
        all_target = Dataset(
            images=test_split.images[:20],
            labels=torch.full((20,), 3, dtype=torch.int64),
            num_classes=test_split.num_classes,
        )
        with pytest.raises(EvaluationError):
            evaluate_acc_asr(tiny_model, seeded_patch, all_target, square_trigger, 3)

    def test_unlabeled_rejected(self, tiny_model, test_split, seeded_patch, square_trigger):
        with pytest.raises(MissingLabelsError):
            evaluate_acc_asr(
                tiny_model, seeded_patch, test_split.without_labels(), square_trigger, 3
            )

    def test_empty_rejected(self, tiny_model, test_split, seeded_patch, square_trigger):
        empty = Dataset(
            images=torch.zeros(0, 3, 32, 32), labels=torch.zeros(0, dtype=torch.int64)
        )
        with pytest.raises(EvaluationError):
            evaluate_acc_asr(tiny_model, seeded_patch, empty, square_trigger, 3)

    def test_unpatched_accuracy_matches_manual(self, tiny_model, test_split):
        acc = unpatched_accuracy(tiny_model, test_split)
        pred = tiny_model.predict(test_split.images).logits.argmax(dim=1)
        assert acc == float((pred == test_split.labels).double().mean())
        with pytest.raises(MissingLabelsError):
            unpatched_accuracy(tiny_model, test_split.without_labels())


class TestOOD:
    def test_unknown_detector_rejected(self, tiny_model, test_split):
        with pytest.raises(EvaluationError):
            ood_scores("energy", tiny_model, test_split.images[:8], test_split.images[8:16])

    def test_empty_sets_rejected(self, tiny_model, test_split):
        with pytest.raises(EvaluationError):
            ood_scores("max_softmax", tiny_model, test_split.images[:0], test_split.images[:8])

    def test_auroc_matches_recount(self, tiny_model, test_split):
        """The reported AUROC must equal a pair-counting recomputation."""
        result = ood_scores(
            "max_softmax", tiny_model, test_split.images[:60], test_split.images[60:120]
        )
        wins = ties = 0
        for s_in in result.in_scores:
            for s_out in result.candidate_scores:
                wins += s_in > s_out
                ties += s_in == s_out
        want = (wins + 0.5 * ties) / (len(result.in_scores) * len(result.candidate_scores))
        assert abs(result.auroc - want) < 1e-12

    def test_same_set_scores_exactly_half(self, tiny_model, test_split):
        images = test_split.images[:50]
        result = ood_scores("max_softmax", tiny_model, images, images.clone())
        assert result.auroc == 0.5

    def test_in_vs_in_near_half(self, tiny_model, test_split):
        for detector in DETECTORS:
            result = ood_scores(
                detector, tiny_model, test_split.images[0::2], test_split.images[1::2]
            )
            assert 0.3 < result.auroc < 0.7, detector

    def test_odin_params_recorded(self, tiny_model, test_split):
        result = ood_scores("odin", tiny_model, test_split.images[:16], test_split.images[16:32])
        assert result.params == {"temperature": 1000.0, "epsilon": 0.0014}

    def test_mahalanobis_needs_calibration_data(self, tiny_model, test_split):
        with pytest.raises(EvaluationError):
            ood_scores("mahalanobis", tiny_model, test_split.images[:2], test_split.images[:8])

    def test_mahalanobis_ridges_singular_covariance(self, tiny_model, test_split):
        base = test_split.images[:1]
        nearly_same = base.repeat(16, 1, 1, 1) + 1e-7 * torch.randn(
            16, 3, 32, 32, generator=torch.Generator().manual_seed(7)
        )
        result = ood_scores("mahalanobis", tiny_model, nearly_same, test_split.images[:8])
        assert result.regularized

    def test_compare_candidate_sets_shape(self, tiny_model, test_split):
        control = make_control_dataset(24, 32, seed=3).images
        rows = compare_candidate_sets(
            tiny_model,
            test_split.images[:48],
            {"shifted": control, "same": test_split.images[48:96]},
        )
        assert len(rows) == len(DETECTORS) * 2
        assert {r["detector"] for r in rows} == set(DETECTORS)
        for row in rows:
            assert 0.0 <= row["auroc"] <= 1.0
            assert row["candidates"] in {"shifted", "same"}


class TestSilhouette:
    @pytest.mark.parametrize("n,clusters", [(60, 2), (150, 3), (200, 2)])
    def test_matches_brute_force(self, n, clusters):
        rng = np.random.default_rng(n + clusters)
        centers = rng.normal(scale=4.0, size=(clusters, 5))
        labels = rng.integers(0, clusters, size=n)
        features = centers[labels] + rng.normal(size=(n, 5))
        assert abs(silhouette(features, labels) - silhouette_oracle(features, labels)) < 1e-9

    def test_random_labels_score_near_zero(self):
        rng = np.random.default_rng(9)
        features = rng.normal(size=(120, 5))
        labels = rng.integers(0, 2, size=120)
        got = silhouette(features, labels)
        assert abs(got - silhouette_oracle(features, labels)) < 1e-9
        assert abs(got) < 0.2


class TestClusterProbe:
    def two_group_images(self, n_dim: int, n_bright: int) -> torch.Tensor:
        gen = torch.Generator().manual_seed(11)
        dim = 0.1 + 0.2 * torch.rand(n_dim, 3, 32, 32, generator=gen)
        bright = 0.75 + 0.2 * torch.rand(n_bright, 3, 32, 32, generator=gen)
        return torch.cat([dim, bright])

    def test_lopsided_split_is_flagged(self):
        result = activation_cluster_probe(stub_model(), self.two_group_images(180, 20), seed=1)
        assert result.flagged
        assert result.silhouette > 0.10
        assert sorted(result.cluster_sizes) == [20, 180]
        assert result.min_size_fraction == pytest.approx(0.1)

    def test_balanced_split_not_flagged(self):
        result = activation_cluster_probe(stub_model(), self.two_group_images(100, 100), seed=1)
        assert result.silhouette > 0.10
        assert not result.flagged

    def test_homogeneous_cloud_not_flagged(self):
        gen = torch.Generator().manual_seed(12)
        images = 0.4 + 0.2 * torch.rand(150, 3, 32, 32, generator=gen)
        result = activation_cluster_probe(stub_model(), images, seed=1)
        assert not result.flagged

    def test_deterministic(self):
        images = self.two_group_images(90, 30)
        a = activation_cluster_probe(stub_model(), images, seed=4)
        b = activation_cluster_probe(stub_model(), images, seed=4)
        assert a.silhouette == b.silhouette
        assert a.cluster_sizes == b.cluster_sizes

    def test_too_few_images_rejected(self):
        with pytest.raises(ProbeError):
            activation_cluster_probe(stub_model(), torch.rand(2, 3, 32, 32))

    def test_mixed_predictions_rejected(self, tiny_model, test_split):
        preds = tiny_model.predict(test_split.images[:64]).logits.argmax(dim=1)
        if len(set(preds.tolist())) < 2:
            pytest.skip("fixture model collapsed to one class")
        with pytest.raises(ProbeError):
            activation_cluster_probe(tiny_model, test_split.images[:64])

    def test_identical_features_rejected(self):
        images = torch.full((10, 3, 32, 32), 0.5)
        with pytest.raises(ProbeError):
            activation_cluster_probe(stub_model(), images)

    def test_probe_set_all_predicted_target(self, tiny_model, test_split, layout32, square_trigger):
        patch = random_patch(layout32, seed=202)
        images = build_probe_set(tiny_model, patch, test_split, square_trigger, 1, seed=6)
        preds = tiny_model.predict(images).logits.argmax(dim=1)
        assert torch.all(preds == 1)

    def test_probe_set_without_target_predictions_rejected(self, test_split, layout32, square_trigger):
        # stub predicts class 3 for everything, so class 0 yields nothing
        patch = random_patch(layout32, seed=203)
        with pytest.raises(ProbeError):
            build_probe_set(stub_model(3), patch, test_split, square_trigger, 0)


class TestSweep:
    def test_grid_runs_and_records_params(self, tiny_model, train_split, test_split, layout32, square_trigger):
        config = TrainConfig(
            layout=layout32, target_class=1, iterations=4, batch_size=16, eval_interval=2, seed=7
        )
        small_train = train_split.subset(list(range(60)))
        small_test = test_split.subset(list(range(40)))
        points = sweep(
            tiny_model,
            small_train,
            small_test,
            square_trigger,
            config,
            {"width": [2, 3], "alpha": [0.4]},
        )
        assert len(points) == 2
        assert [p.params["width"] for p in points] == [2, 3]
        for point in points:
            assert point.report is not None
            row = point.to_row()
            assert row["status"] == "ok"
            assert row["param_alpha"] == 0.4
            assert row["trigger_width"] == point.params["width"]

    def test_layout_axis_rebuilds_layout(self, tiny_model, train_split, test_split, layout32, square_trigger):
        config = TrainConfig(
            layout=layout32, target_class=1, iterations=3, batch_size=16, eval_interval=2, seed=8
        )
        points = sweep(
            tiny_model,
            train_split.subset(list(range(48))),
            test_split.subset(list(range(32))),
            square_trigger,
            config,
            {"patch_width": [5, 9]},
        )
        assert [p.report.layout["patch_width"] for p in points] == [5, 9]

    def test_failing_point_recorded_not_raised(self, tiny_model, train_split, test_split, layout32, square_trigger):
        config = TrainConfig(
            layout=layout32, target_class=1, iterations=3, batch_size=16, eval_interval=2, seed=9
        )
        points = sweep(
            tiny_model,
            train_split.subset(list(range(48))),
            test_split.subset(list(range(32))),
            square_trigger,
            config,
            {"width": [3, 60]},
        )
        assert points[0].report is not None
        assert points[1].report is None
        assert points[1].error
        assert points[1].to_row()["status"] == "error"

    def test_unknown_axis_becomes_error_point(self, tiny_model, train_split, test_split, layout32, square_trigger):
        config = TrainConfig(layout=layout32, target_class=1, iterations=2, seed=10)
        points = sweep(
            tiny_model,
            train_split.subset(list(range(48))),
            test_split.subset(list(range(32))),
            square_trigger,
            config,
            {"warp_factor": [1]},
        )
        assert points[0].report is None
        assert "warp_factor" in points[0].error


class TestMatrix:
    def test_rows_cover_family_and_joint(self, tiny_model, train_split, test_split, layout32, square_trigger):
        family = prune_family(
            tiny_model, [0.0, 0.5], finetune_data=train_split.subset(list(range(64))),
            finetune_epochs=0,
        )
        assert family[0.0] is tiny_model
        config = TrainConfig(
            layout=layout32, target_class=1, iterations=3, batch_size=16, eval_interval=2, seed=11
        )
        result = robustness_matrix(
            family,
            train_split.subset(list(range(48))),
            test_split.subset(list(range(32))),
            square_trigger,
            config,
            joint_rows=[(0.0, 0.5)],
        )
        assert result.ratios == [0.0, 0.5]
        assert [row["train_on"] for row in result.rows] == ["0", "0.5", "0&0.5"]
        rows = result.to_rows()
        assert len(rows) == 6
        assert {r["test_ratio"] for r in rows} == {0.0, 0.5}

    def test_unknown_joint_ratio_rejected(self, tiny_model, train_split, test_split, layout32, square_trigger):
        family = {0.0: tiny_model}
        config = TrainConfig(layout=layout32, target_class=1, iterations=2, seed=12)
        with pytest.raises(ConfigError):
            robustness_matrix(
                family,
                train_split.subset(list(range(48))),
                test_split.subset(list(range(32))),
                square_trigger,
                config,
                joint_rows=[(0.0, 0.9)],
            )


class TestReporting:
    def test_csv_roundtrip_and_column_order(self, tmp_path):
        rows = [
            {"name": "a", "acc": 0.5, "asr": 0.25, "n": 10},
            {"name": "b", "asr": 0.75, "extra": "x"},
        ]
        path = tmp_path / "rows.csv"
        columns = write_csv_rows(rows, str(path))
        assert columns == ["name", "acc", "asr", "n", "extra"]
        back = read_csv_rows(str(path))
        assert back[0] == {"name": "a", "acc": 0.5, "asr": 0.25, "n": 10, "extra": ""}
        assert back[1]["extra"] == "x"
        assert back[1]["acc"] == ""

    def test_csv_float_formatting(self, tmp_path):
        path = tmp_path / "fmt.csv"
        write_csv_rows([{"v": 1.0 / 3.0}], str(path))
        assert path.read_text().splitlines()[1] == format(1.0 / 3.0, ".10g")

    def test_explicit_columns_respected(self, tmp_path):
        path = tmp_path / "cols.csv"
        write_csv_rows([{"b": 2, "a": 1}], str(path), columns=["a", "b"])
        assert path.read_text().splitlines()[0] == "a,b"

    def test_plots_render_files(self, tmp_path):
        eval_rows = [
            {"acc": 0.9, "asr": 0.8, "label": "p1"},
            {"acc": 0.7, "asr": 0.95, "label": "p2"},
        ]
        plot_tradeoff(eval_rows, str(tmp_path / "tradeoff.png"), label_key="label")
        sweep_rows = [
            {"param_width": 2, "acc": 0.9, "asr": 0.5, "status": "ok"},
            {"param_width": 3, "acc": 0.8, "asr": 0.9, "status": "ok"},
            {"param_width": 60, "acc": "", "asr": "", "status": "error"},
        ]
        plot_size_sweep(sweep_rows, "param_width", str(tmp_path / "sweep.png"))
        history_rows = [
            {
                "iteration": i,
                "clean_loss": 1.0 / i,
                "attack_loss": 2.0 / i,
                "alpha": 0.5,
                "acc_estimate": 0.9,
                "asr_estimate": 0.1 * i,
            }
            for i in range(1, 6)
        ]
        plot_history(history_rows, str(tmp_path / "history.png"))
        plot_history(history_rows, str(tmp_path / "history-sec.png"), seconds=[0.1 * i for i in range(5)])
        matrix_rows = [
            {"train_on": "0", "test_ratio": 0.0, "asr": 0.9, "acc": 0.95},
            {"train_on": "0", "test_ratio": 0.5, "asr": 0.2, "acc": 0.9},
            {"train_on": "0.5", "test_ratio": 0.0, "asr": 0.3, "acc": 0.94},
            {"train_on": "0.5", "test_ratio": 0.5, "asr": 0.88, "acc": 0.91},
        ]
        plot_matrix(matrix_rows, str(tmp_path / "matrix.png"))
        for name in ("tradeoff.png", "sweep.png", "history.png", "history-sec.png", "matrix.png"):
            assert (tmp_path / name).stat().st_size > 0
