"""Config schema, run-directory provenance, and command-line flows.

The flow tests drive ``main(argv)`` in-process against a miniature
experiment (16x16 frames, 6 classes, a handful of iterations) so the whole
pipeline stays under a minute while still producing every artifact kind.
"""

import json

import numpy as np
import pytest
import yaml

from patchtrap.cli import main
from patchtrap.config import (
    ExperimentConfig,
    RunManifest,
    create_run_dir,
    file_digest,
    load_config,
    run_root,
    write_manifest,
)
from patchtrap.errors import ConfigError

BASE_CONFIG = {
    "seed": 9,
    "model": {"channels": [8, 8], "epochs": 2, "lr": 2e-3, "batch_size": 32},
    "dataset": {"num_classes": 6, "image_size": 16, "n_train": 120, "n_test": 60},
    "layout": {"frame_height": 16, "frame_width": 16, "patch_width": 5},
    "trigger": {"width": 2},
    "train": {"target_class": 1, "iterations": 6, "batch_size": 32, "eval_interval": 3},
}


def write_config(path, **overrides):
    doc = json.loads(json.dumps(BASE_CONFIG))
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key:
            doc[section] = value
        else:
            doc.setdefault(section, {})[key] = value
    path.write_text(yaml.safe_dump(doc))
    return path


class TestConfigSchema:
    def test_minimal_document_gets_defaults(self):
        cfg = ExperimentConfig.from_mapping({"seed": 3})
        doc = cfg.document()
        assert doc["train"]["alpha"] == 0.5
        assert doc["layout"]["patch_width"] == 7
        assert doc["dataset"]["n_train"] == 3000
        assert cfg.build_layout().patch_width == 7

    def test_missing_seed_rejected(self):
        with pytest.raises(ConfigError, match="seed"):
            ExperimentConfig.from_mapping({"train": {"alpha": 0.5}})

    @pytest.mark.parametrize(
        "raw,needle",
        [
            ({"seed": 1, "warp": {}}, "warp"),
            ({"seed": 1, "train": {"warp_factor": 2}}, "train.warp_factor"),
            ({"seed": 1, "train": {"iterations": "many"}}, "train.iterations"),
            ({"seed": 1, "train": {"alpha": 1.5}}, "alpha"),
            ({"seed": 1, "train": {"target_class": 12}}, "target_class"),
            ({"seed": 1, "trigger": {"row": "top"}}, "trigger.row"),
            ({"seed": True}, "seed"),
            ({"seed": 1, "dataset": {"image_size": 24}}, "image_size"),
            ({"seed": 1, "train": "fast"}, "train"),
        ],
    )
    def test_bad_documents_name_the_field(self, raw, needle):
        with pytest.raises(ConfigError, match=needle):
            ExperimentConfig.from_mapping(raw)

    def test_hash_ignores_formatting_and_spelled_defaults(self, tmp_path):
        minimal = tmp_path / "a.yaml"
        minimal.write_text("seed: 9\n")
        spelled = tmp_path / "b.yaml"
        spelled.write_text(
            "train:\n  alpha: 0.5\n  iterations: 2000\nseed: 9\nmodel:\n  epochs: 15\n"
        )
        assert load_config(minimal).hash() == load_config(spelled).hash()

    def test_hash_tracks_values(self):
        base = ExperimentConfig.from_mapping({"seed": 9})
        other = ExperimentConfig.from_mapping({"seed": 9, "train": {"alpha": 0.25}})
        assert base.hash() != other.hash()

    def test_empty_section_means_defaults(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 4\nmodel:\n")
        assert load_config(path).model["epochs"] == 15

    def test_unparseable_yaml_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: [1, 2\n")
        with pytest.raises(ConfigError, match="could not parse"):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_missing_transform_artifact_rejected(self, tmp_path):
        cfg = ExperimentConfig.from_mapping(
            {"seed": 2, "transforms": {"attack": "ghost.json"}}
        )
        with pytest.raises(ConfigError, match="ghost.json"):
            cfg.load_transforms(tmp_path)


class TestRunDirs:
    def test_repeat_runs_get_fresh_suffixed_dirs(self, tmp_path):
        first = create_run_dir("train", "abcdef123456", tmp_path)
        second = create_run_dir("train", "abcdef123456", tmp_path)
        third = create_run_dir("train", "abcdef123456", tmp_path)
        assert first.name == "train-abcdef123456"
        assert second.name == "train-abcdef123456-2"
        assert third.name == "train-abcdef123456-3"

    def test_run_root_env_fallback(self, monkeypatch, tmp_path):
        monkeypatch.setenv("PATCHTRAP_RUNS", str(tmp_path / "envroot"))
        assert run_root(None) == tmp_path / "envroot"
        assert run_root(tmp_path / "explicit") == tmp_path / "explicit"

    def test_manifest_hashes_every_artifact(self, tmp_path):
        run = create_run_dir("eval", "feed0123beef", tmp_path)
        (run / "report.csv").write_text("acc\n0.5\n")
        manifest = write_manifest(run, "eval", "feed0123beef", 1.25, {"acc": 0.5})
        assert manifest.artifacts == {"report.csv": file_digest(run / "report.csv")}
        loaded = RunManifest.load(run / "manifest.json")
        assert loaded.command == "eval"
        assert loaded.config_hash == "feed0123beef"
        assert loaded.seconds == 1.25
        assert loaded.notes == {"acc": 0.5}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """One trained model + patch shared by the command-flow tests."""
    root = tmp_path_factory.mktemp("cliws")
    config = write_config(root / "exp.yaml")
    runs = root / "runs"

    assert main(["train-model", "--config", str(config), "--runs", str(runs)]) == 0
    model_dir = runs / f"train-model-{load_config(config).hash()[:12]}"
    model = model_dir / "model"

    assert (
        main(["train", "--config", str(config), "--model", str(model), "--runs", str(runs)])
        == 0
    )
    train_dir = runs / f"train-{load_config(config).hash()[:12]}"
    return {
        "root": root,
        "config": config,
        "runs": runs,
        "model": model,
        "model_dir": model_dir,
        "train_dir": train_dir,
        "patch": train_dir / "patch",
    }


class TestCommandFlows:
    def test_train_model_artifacts(self, ws):
        names = {p.name for p in ws["model_dir"].iterdir()}
        assert {"model.pt", "model.json", "config.json", "manifest.json"} <= names
        manifest = RunManifest.load(ws["model_dir"] / "manifest.json")
        assert manifest.command == "train-model"
        assert 0.0 <= manifest.notes["test_accuracy"] <= 1.0
        assert set(manifest.artifacts) == names - {"manifest.json"}

    def test_train_artifacts(self, ws):
        names = {p.name for p in ws["train_dir"].iterdir()}
        assert {"patch.png", "patch.json", "history.csv", "config.json"} <= names
        manifest = RunManifest.load(ws["train_dir"] / "manifest.json")
        assert manifest.notes["selected_iteration"] >= 1
        header = (ws["train_dir"] / "history.csv").read_text().splitlines()[0]
        assert "seconds" not in header

    def test_eval_writes_report(self, ws, capsys):
        rc = main(
            [
                "eval",
                "--config",
                str(ws["config"]),
                "--model",
                str(ws["model"]),
                "--patch",
                str(ws["patch"]),
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "acc=" in out and "asr=" in out
        eval_dir = ws["runs"] / f"eval-{load_config(ws['config']).hash()[:12]}"
        header = (eval_dir / "report.csv").read_text().splitlines()[0].split(",")
        assert {"acc", "asr", "unpatched_acc"} <= set(header)

    def test_train_reruns_are_bit_identical(self, ws):
        config = write_config(ws["root"] / "repeat.yaml")
        runs_a = ws["root"] / "runs-a"
        runs_b = ws["root"] / "runs-b"
        for runs in (runs_a, runs_b):
            rc = main(
                [
                    "train",
                    "--config",
                    str(config),
                    "--model",
                    str(ws["model"]),
                    "--runs",
                    str(runs),
                ]
            )
            assert rc == 0
        name = f"train-{load_config(config).hash()[:12]}"
        a = RunManifest.load(runs_a / name / "manifest.json")
        b = RunManifest.load(runs_b / name / "manifest.json")
        assert a.artifacts == b.artifacts
        assert (runs_a / name / "patch.png").read_bytes() == (
            runs_b / name / "patch.png"
        ).read_bytes()
        assert (runs_a / name / "history.csv").read_bytes() == (
            runs_b / name / "history.csv"
        ).read_bytes()

    def test_sweep_and_report(self, ws, capsys):
        rc = main(
            [
                "sweep",
                "--config",
                str(ws["config"]),
                "--model",
                str(ws["model"]),
                "--grid",
                '{"width": [2, 3]}',
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 0
        assert "swept 2 points (0 failed)" in capsys.readouterr().out
        sweep_dir = ws["runs"] / f"sweep-{load_config(ws['config']).hash()[:12]}"
        assert (sweep_dir / "sweep.csv").exists()

        rc = main(["report", "--run", str(sweep_dir), "--runs", str(ws["runs"])])
        assert rc == 0
        report_dirs = sorted(ws["runs"].glob("report-*"))
        rendered = {p.name for p in report_dirs[-1].iterdir()}
        assert "tradeoff.png" in rendered
        assert "sweep_width.png" in rendered

    def test_bad_grid_rejected(self, ws, capsys):
        rc = main(
            [
                "sweep",
                "--config",
                str(ws["config"]),
                "--model",
                str(ws["model"]),
                "--grid",
                '{"width": 3}',
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 2
        assert "--grid" in capsys.readouterr().err

    def test_matrix_flow_and_report(self, ws):
        rc = main(
            [
                "matrix",
                "--config",
                str(ws["config"]),
                "--model",
                str(ws["model"]),
                "--ratios",
                "0,0.5",
                "--finetune-epochs",
                "0",
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 0
        matrix_dir = ws["runs"] / f"matrix-{load_config(ws['config']).hash()[:12]}"
        rows = (matrix_dir / "matrix.csv").read_text().splitlines()
        assert len(rows) == 1 + 4  # header + 2 train rows x 2 test ratios

        rc = main(["report", "--run", str(matrix_dir), "--runs", str(ws["runs"])])
        assert rc == 0
        report_dirs = sorted(ws["runs"].glob("report-*"))
        rendered = {p.name for p in report_dirs[-1].iterdir()}
        assert {"matrix_asr.png", "matrix_acc.png"} <= rendered

    def test_ood_flow(self, ws, capsys):
        rc = main(
            [
                "ood",
                "--config",
                str(ws["config"]),
                "--model",
                str(ws["model"]),
                "--patch",
                str(ws["patch"]),
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "max_softmax" in out and "mahalanobis" in out
        ood_dir = ws["runs"] / f"ood-{load_config(ws['config']).hash()[:12]}"
        lines = (ood_dir / "ood.csv").read_text().splitlines()
        assert len(lines) == 1 + 6  # header + 3 detectors x 2 candidate sets

    def test_poison_baseline_flow(self, ws, capsys):
        rc = main(
            [
                "poison-baseline",
                "--config",
                str(ws["config"]),
                "--ratio",
                "0.1",
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 0
        assert "poisoned 12 images" in capsys.readouterr().out
        poison_dir = ws["runs"] / f"poison-baseline-{load_config(ws['config']).hash()[:12]}"
        header = (poison_dir / "poison.csv").read_text().splitlines()[0].split(",")
        assert {"ratio", "n_poisoned", "clean_acc", "asr"} <= set(header)

    def test_probe_without_target_predictions_exits_2(self, ws, capsys):
        rc = main(
            [
                "probe",
                "--config",
                str(ws["config"]),
                "--model",
                str(ws["model"]),
                "--patch",
                str(ws["patch"]),
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 2
        assert "probe" in capsys.readouterr().err

    def test_probe_flow_on_stronger_model(self, ws, capsys):
        config = write_config(
            ws["root"] / "probe.yaml",
            **{"model.epochs": 6, "dataset.n_train": 240, "train.iterations": 40},
        )
        runs = ws["root"] / "runs-probe"
        assert main(["train-model", "--config", str(config), "--runs", str(runs)]) == 0
        model = runs / f"train-model-{load_config(config).hash()[:12]}" / "model"
        assert (
            main(["train", "--config", str(config), "--model", str(model), "--runs", str(runs)])
            == 0
        )
        patch = runs / f"train-{load_config(config).hash()[:12]}" / "patch"
        rc = main(
            [
                "probe",
                "--config",
                str(config),
                "--model",
                str(model),
                "--patch",
                str(patch),
                "--runs",
                str(runs),
            ]
        )
        assert rc == 0
        assert "silhouette=" in capsys.readouterr().out
        probe_dir = runs / f"probe-{load_config(config).hash()[:12]}"
        header = (probe_dir / "probe.csv").read_text().splitlines()[0].split(",")
        assert {"n", "silhouette", "min_size_fraction", "flagged"} <= set(header)

    def test_missing_model_artifact_exits_2(self, ws, capsys):
        rc = main(
            [
                "eval",
                "--config",
                str(ws["config"]),
                "--model",
                str(ws["root"] / "ghost"),
                "--patch",
                str(ws["patch"]),
                "--runs",
                str(ws["runs"]),
            ]
        )
        assert rc == 2
        assert "ghost.pt" in capsys.readouterr().err

    def test_missing_required_flag_exits_2(self, ws, capsys):
        rc = main(
            ["eval", "--config", str(ws["config"]), "--runs", str(ws["runs"])]
        )
        assert rc == 2
        assert "--model" in capsys.readouterr().err

    def test_report_requires_manifest(self, ws, tmp_path, capsys):
        rc = main(["report", "--run", str(tmp_path), "--runs", str(ws["runs"])])
        assert rc == 2
        assert "manifest" in capsys.readouterr().err

    def test_report_needs_renderable_csvs(self, ws, capsys):
        rc = main(["report", "--run", str(ws["model_dir"]), "--runs", str(ws["runs"])])
        assert rc == 2
        assert "no renderable CSVs" in capsys.readouterr().err


class TestBoardAndTransformFlow:
    def test_board_fit_train_chain(self, tmp_path, capsys):
        runs = tmp_path / "runs"
        rc = main(["board", "--runs", str(runs)])
        assert rc == 0
        board_dir = next(runs.glob("board-*"))
        assert (board_dir / "board.png").exists()
        geometry = json.loads((board_dir / "geometry.json").read_text())
        assert geometry["image_size"] == [256, 256]

        # identity world: the photo is the board itself
        from patchtrap.phystransform import correspondences_from_homography

        corr = correspondences_from_homography(256, 256, 4, np.eye(3))
        corr.save(str(tmp_path / "corr.json"))
        rc = main(
            [
                "fit-transform",
                "--board",
                str(board_dir / "board.png"),
                "--photo",
                str(board_dir / "board.png"),
                "--geometry",
                str(board_dir / "geometry.json"),
                "--corr",
                str(tmp_path / "corr.json"),
                "--runs",
                str(runs),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "converged=True" in out
        fit_dir = next(runs.glob("fit-transform-*"))
        manifest = RunManifest.load(fit_dir / "manifest.json")
        assert manifest.notes["shape_max_residual"] < 1e-6
        assert manifest.notes["color_residual_mse"] < 1e-4

        # a config can point at the fitted artifact by relative path
        config = write_config(
            tmp_path / "withenv.yaml",
            **{"transforms.attack": str(fit_dir / "transform.json")},
        )
        env = load_config(config).load_transforms(tmp_path)
        assert env.clean is None
        assert env.attack is not None

    def test_missing_board_artifact_exits_2(self, tmp_path, capsys):
        rc = main(
            [
                "fit-transform",
                "--board",
                str(tmp_path / "b.png"),
                "--photo",
                str(tmp_path / "p.png"),
                "--geometry",
                str(tmp_path / "g.json"),
                "--corr",
                str(tmp_path / "c.json"),
                "--runs",
                str(tmp_path / "runs"),
            ]
        )
        assert rc == 2
        assert "--board" in capsys.readouterr().err
