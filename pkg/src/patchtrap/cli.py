"""Command line surface.

Every command allocates a fresh write-once run directory under the run root
(``--runs``, ``$PATCHTRAP_RUNS``, or ``./runs``), named by the config hash,
and finishes by writing ``manifest.json`` with content hashes of everything
it produced. Wall-clock time lives only in the manifest, so CSV and artifact
bytes are identical across reruns of the same config and seed.

``report`` is the one command that never computes: it re-renders figures
from the CSVs of an earlier run directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .compositor import Patch, apply_trigger, attach_patch, load_patch, save_patch
from .config import (
    ExperimentConfig,
    create_run_dir,
    file_digest,
    load_config,
    write_manifest,
)
from .data import Dataset, make_control_dataset, make_synthetic_dataset
from .errors import ConfigError, PatchTrapError
from .evalsuite import (
    activation_cluster_probe,
    build_probe_set,
    compare_candidate_sets,
    evaluate_acc_asr,
    plot_history,
    plot_matrix,
    plot_size_sweep,
    plot_tradeoff,
    prune_family,
    read_csv_rows,
    robustness_matrix,
    sweep,
    unpatched_accuracy,
    write_csv_rows,
)
from .models import (
    ClassifierModel,
    evaluate_accuracy,
    load_model,
    poison_dataset,
    save_model,
    train_baseline,
)
from .objective import train_patch
from .phystransform import (
    BoardGeometry,
    CalibrationBoardSpec,
    CorrespondenceSet,
    PhysicalTransform,
    extract_color_pairs,
    fit_color_transform,
    fit_shape_transform,
    generate_board,
)
from .seeding import derive_seed, torch_generator


def _save_image(image: torch.Tensor, path: Path) -> None:
    arr = image.clamp(0.0, 1.0).permute(1, 2, 0).numpy()
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path, format="PNG")


def _load_image(path: str | Path) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"image not found: {path}")
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def _write_config_copy(cfg: ExperimentConfig, run_dir: Path) -> None:
    run_dir.joinpath("config.json").write_text(
        json.dumps(cfg.document(), indent=2, sort_keys=True) + "\n"
    )


def _datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    return make_synthetic_dataset(cfg.build_dataset_spec())


def _train_victim(cfg: ExperimentConfig, train_data: Dataset, test_data: Dataset) -> ClassifierModel:
    return train_baseline(
        train_data,
        test_data,
        arch=cfg.build_arch(),
        epochs=cfg.model["epochs"],
        lr=cfg.model["lr"],
        batch_size=cfg.model["batch_size"],
        seed=derive_seed(cfg.seed, "model"),
    )


def _require(path: str | None, flag: str) -> str:
    if path is None:
        raise ConfigError(f"{flag} is required for this command")
    return path


def _load_models(paths: list[str]) -> list[ClassifierModel]:
    models = []
    for prefix in paths:
        if not Path(prefix + ".pt").exists():
            raise ConfigError(f"model artifact not found: {prefix}.pt")
        models.append(load_model(prefix))
    return models


def _load_patch_artifact(prefix: str) -> Patch:
    stem = prefix[:-4] if prefix.endswith(".png") or prefix.endswith(".json") else prefix
    if not Path(stem + ".json").exists():
        raise ConfigError(f"patch artifact not found: {stem}.json")
    return load_patch(prefix)


def cmd_train_model(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    run_dir = create_run_dir("train-model", chash, args.runs)
    started = time.perf_counter()

    train_data, test_data = _datasets(cfg)
    model = _train_victim(cfg, train_data, test_data)
    save_model(model, str(run_dir / "model"))
    _write_config_copy(cfg, run_dir)

    notes = {
        "train_accuracy": model.provenance.get("train_accuracy"),
        "test_accuracy": model.provenance.get("test_accuracy"),
        "fingerprint": model.fingerprint,
    }
    write_manifest(run_dir, "train-model", chash, time.perf_counter() - started, notes)
    print(f"test accuracy: {notes['test_accuracy']:.4f}")
    print(f"run directory: {run_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    run_dir = create_run_dir("train", chash, args.runs)
    started = time.perf_counter()

    train_data, test_data = _datasets(cfg)
    transforms = cfg.load_transforms(Path(args.config).parent)
    if args.model:
        models = _load_models(args.model)
    else:
        victim = _train_victim(cfg, train_data, test_data)
        save_model(victim, str(run_dir / "model"))
        models = [victim]

    layout = cfg.build_layout()
    train_cfg = cfg.build_train_config(layout, transforms)
    checkpoint_dir = None
    if train_cfg.checkpoint_interval > 0:
        checkpoint_dir = str(run_dir / "checkpoints")
    patch, history = train_patch(
        models, train_data, cfg.build_trigger(), train_cfg, checkpoint_dir=checkpoint_dir
    )
    save_patch(patch, str(run_dir / "patch"))
    history.to_csv(str(run_dir / "history.csv"), include_seconds=False)
    _write_config_copy(cfg, run_dir)

    notes = {
        "patch_fingerprint": patch.fingerprint(),
        "models": [m.fingerprint for m in models],
        "selected_iteration": patch.metadata.get("selected_iteration"),
        "val_acc": patch.metadata.get("val_acc"),
        "val_asr": patch.metadata.get("val_asr"),
    }
    write_manifest(run_dir, "train", chash, time.perf_counter() - started, notes)
    print(
        f"selected iteration {notes['selected_iteration']}: "
        f"val_acc={notes['val_acc']:.4f} val_asr={notes['val_asr']:.4f}"
    )
    print(f"run directory: {run_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    run_dir = create_run_dir("eval", chash, args.runs)
    started = time.perf_counter()

    _, test_data = _datasets(cfg)
    model = _load_models([_require(args.model, "--model")])[0]
    patch = _load_patch_artifact(_require(args.patch, "--patch"))
    transforms = cfg.load_transforms(Path(args.config).parent)
    target = int(patch.metadata.get("target_class", cfg.train["target_class"]))

    report = evaluate_acc_asr(
        model,
        patch,
        test_data,
        cfg.build_trigger(),
        target,
        transforms=transforms,
        seed=derive_seed(cfg.seed, "eval"),
        batch_size=cfg.eval["batch_size"],
    )
    row = report.to_row()
    row["unpatched_acc"] = unpatched_accuracy(model, test_data, cfg.eval["batch_size"])
    write_csv_rows([row], str(run_dir / "report.csv"))
    _write_config_copy(cfg, run_dir)

    notes = {"acc": report.acc, "asr": report.asr, "unpatched_acc": row["unpatched_acc"]}
    write_manifest(run_dir, "eval", chash, time.perf_counter() - started, notes)
    print(f"acc={report.acc:.4f} asr={report.asr:.4f} (unpatched {row['unpatched_acc']:.4f})")
    print(f"run directory: {run_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--grid is not valid JSON: {exc}") from exc
    if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
        raise ConfigError("--grid must be a JSON object mapping axis names to value lists")

    run_dir = create_run_dir("sweep", chash, args.runs)
    started = time.perf_counter()
    train_data, test_data = _datasets(cfg)
    model = _load_models([_require(args.model, "--model")])[0]
    transforms = cfg.load_transforms(Path(args.config).parent)
    base_config = cfg.build_train_config(cfg.build_layout(), transforms)

    points = sweep(model, train_data, test_data, cfg.build_trigger(), base_config, grid)
    write_csv_rows([p.to_row() for p in points], str(run_dir / "sweep.csv"))
    _write_config_copy(cfg, run_dir)

    failed = sum(1 for p in points if p.report is None)
    notes = {"grid": grid, "points": len(points), "failed": failed}
    write_manifest(run_dir, "sweep", chash, time.perf_counter() - started, notes)
    print(f"swept {len(points)} points ({failed} failed)")
    print(f"run directory: {run_dir}")
    return 0


def cmd_matrix(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    ratios = [float(r) for r in args.ratios.split(",") if r != ""]
    joint_rows = [tuple(float(r) for r in spec.split("&")) for spec in args.joint or []]

    run_dir = create_run_dir("matrix", chash, args.runs)
    started = time.perf_counter()
    train_data, test_data = _datasets(cfg)
    model = _load_models([_require(args.model, "--model")])[0]
    transforms = cfg.load_transforms(Path(args.config).parent)
    base_config = cfg.build_train_config(cfg.build_layout(), transforms)

    family = prune_family(
        model,
        ratios,
        train_data,
        finetune_epochs=args.finetune_epochs,
        seed=derive_seed(cfg.seed, "prune"),
    )
    result = robustness_matrix(
        family, train_data, test_data, cfg.build_trigger(), base_config, joint_rows=joint_rows
    )
    write_csv_rows(result.to_rows(), str(run_dir / "matrix.csv"))
    _write_config_copy(cfg, run_dir)

    notes = {"ratios": ratios, "joint": ["&".join(f"{r:g}" for r in j) for j in joint_rows]}
    write_manifest(run_dir, "matrix", chash, time.perf_counter() - started, notes)
    print(f"matrix over ratios {ratios} written")
    print(f"run directory: {run_dir}")
    return 0


def cmd_ood(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    run_dir = create_run_dir("ood", chash, args.runs)
    started = time.perf_counter()

    _, test_data = _datasets(cfg)
    model = _load_models([_require(args.model, "--model")])[0]
    patch = _load_patch_artifact(_require(args.patch, "--patch"))

    control = make_control_dataset(
        len(test_data.images),
        image_size=cfg.dataset["image_size"],
        seed=derive_seed(cfg.seed, "control"),
    )
    candidates = {
        "patched": attach_patch(test_data.images, patch),
        "control": control.images,
    }
    rows = compare_candidate_sets(
        model, test_data.images, candidates, batch_size=cfg.eval["batch_size"]
    )
    write_csv_rows(rows, str(run_dir / "ood.csv"))
    _write_config_copy(cfg, run_dir)

    write_manifest(run_dir, "ood", chash, time.perf_counter() - started, {"rows": len(rows)})
    for row in rows:
        print(f"{row['detector']:13s} {row['candidates']:8s} auroc={row['auroc']:.4f}")
    print(f"run directory: {run_dir}")
    return 0


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    run_dir = create_run_dir("probe", chash, args.runs)
    started = time.perf_counter()

    _, test_data = _datasets(cfg)
    model = _load_models([_require(args.model, "--model")])[0]
    patch = _load_patch_artifact(_require(args.patch, "--patch"))
    target = int(patch.metadata.get("target_class", cfg.train["target_class"]))

    frames = build_probe_set(
        model, patch, test_data, cfg.build_trigger(), target, seed=derive_seed(cfg.seed, "probe")
    )
    result = activation_cluster_probe(model, frames, seed=derive_seed(cfg.seed, "probe-kmeans"))
    row = {
        "n": result.n,
        "silhouette": result.silhouette,
        "cluster_small": min(result.cluster_sizes),
        "cluster_large": max(result.cluster_sizes),
        "min_size_fraction": result.min_size_fraction,
        "flagged": result.flagged,
        "pca_dims": result.pca_dims,
    }
    write_csv_rows([row], str(run_dir / "probe.csv"))
    _write_config_copy(cfg, run_dir)

    write_manifest(run_dir, "probe", chash, time.perf_counter() - started, row)
    print(
        f"silhouette={result.silhouette:.4f} min_fraction={result.min_size_fraction:.4f} "
        f"flagged={result.flagged}"
    )
    print(f"run directory: {run_dir}")
    return 0


def cmd_poison_baseline(args) -> int:
    cfg = load_config(args.config)
    chash = cfg.hash()
    run_dir = create_run_dir("poison-baseline", chash, args.runs)
    started = time.perf_counter()

    train_data, test_data = _datasets(cfg)
    layout = cfg.build_layout()
    trigger = cfg.build_trigger()
    target = cfg.train["target_class"]

    poisoned, chosen = poison_dataset(
        train_data, trigger, layout, target, args.ratio, seed=derive_seed(cfg.seed, "poison")
    )
    model = train_baseline(
        poisoned,
        test_data,
        arch=cfg.build_arch(),
        epochs=cfg.model["epochs"],
        lr=cfg.model["lr"],
        batch_size=cfg.model["batch_size"],
        seed=derive_seed(cfg.seed, "poison-model"),
    )
    save_model(model, str(run_dir / "model"))

    clean_acc = evaluate_accuracy(model, test_data, cfg.eval["batch_size"])
    keep = test_data.labels != target
    frames = apply_trigger(
        test_data.images[keep],
        trigger,
        layout,
        generator=torch_generator(cfg.seed, "poison-eval"),
    )
    preds = model.predict(frames, batch_size=cfg.eval["batch_size"]).logits.argmax(dim=1)
    asr = float((preds == target).float().mean())

    row = {
        "ratio": float(args.ratio),
        "n_poisoned": int(len(chosen)),
        "clean_acc": clean_acc,
        "asr": asr,
        "target_class": target,
        "model_fingerprint": model.fingerprint,
    }
    write_csv_rows([row], str(run_dir / "poison.csv"))
    _write_config_copy(cfg, run_dir)

    write_manifest(run_dir, "poison-baseline", chash, time.perf_counter() - started, row)
    print(f"poisoned {row['n_poisoned']} images: clean_acc={clean_acc:.4f} asr={asr:.4f}")
    print(f"run directory: {run_dir}")
    return 0


def cmd_board(args) -> int:
    spec = CalibrationBoardSpec(
        grid_size=args.grid,
        lattice=args.lattice,
        cell_pixels=args.cell_pixels,
        marker_pixels=args.marker_pixels,
    )
    doc = {
        "grid_size": spec.grid_size,
        "lattice": spec.lattice,
        "cell_pixels": spec.cell_pixels,
        "marker_pixels": spec.marker_pixels,
    }
    chash = hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    run_dir = create_run_dir("board", chash, args.runs)
    started = time.perf_counter()

    board, geometry = generate_board(spec)
    _save_image(board, run_dir / "board.png")
    run_dir.joinpath("geometry.json").write_text(geometry.to_json() + "\n")

    notes = {**doc, "image_size": list(geometry.image_size), "blocks": len(geometry.blocks)}
    write_manifest(run_dir, "board", chash, time.perf_counter() - started, notes)
    print(f"board {geometry.image_size[0]}x{geometry.image_size[1]}, {len(geometry.blocks)} blocks")
    print(f"run directory: {run_dir}")
    return 0


def cmd_fit_transform(args) -> int:
    for flag, path in (("--board", args.board), ("--photo", args.photo),
                       ("--geometry", args.geometry), ("--corr", args.corr)):
        if not Path(path).exists():
            raise ConfigError(f"{flag} artifact not found: {path}")

    doc = {
        "board": file_digest(args.board),
        "photo": file_digest(args.photo),
        "geometry": file_digest(args.geometry),
        "corr": file_digest(args.corr),
        "environment": args.environment,
        "color_mode": args.color_mode,
    }
    chash = hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    run_dir = create_run_dir("fit-transform", chash, args.runs)
    started = time.perf_counter()

    geometry = BoardGeometry.from_json(Path(args.geometry).read_text())
    corr = CorrespondenceSet.load(args.corr)
    board = _load_image(args.board)
    photo = _load_image(args.photo)

    shape = fit_shape_transform(corr)
    if args.color_mode == "aligned":
        color = fit_color_transform(aligned=(shape.apply(board), photo))
    else:
        digital, observed = extract_color_pairs(board, photo, shape, geometry)
        color = fit_color_transform(pairs=(digital, observed))

    transform = PhysicalTransform(environment=args.environment, shape=shape, color=color)
    transform.save(str(run_dir / "transform.json"))

    notes = {
        "environment": args.environment,
        "color_mode": args.color_mode,
        "shape_max_residual": shape.max_residual,
        "color_residual_mse": color.residual_mse,
        "color_converged": color.converged,
        "cells": len(shape.cells),
    }
    write_manifest(run_dir, "fit-transform", chash, time.perf_counter() - started, notes)
    print(
        f"shape residual {shape.max_residual:.3g}px, "
        f"color mse {color.residual_mse:.3g} (converged={color.converged})"
    )
    print(f"run directory: {run_dir}")
    return 0


def _render_reports(src: Path, out: Path) -> list[str]:
    made = []

    history_path = src / "history.csv"
    if history_path.exists():
        plot_history(read_csv_rows(str(history_path)), str(out / "history.png"))
        made.append("history.png")

    sweep_path = src / "sweep.csv"
    if sweep_path.exists():
        rows = read_csv_rows(str(sweep_path))
        ok = [r for r in rows if r.get("status") == "ok"]
        params = [k for k in (rows[0] if rows else {}) if k.startswith("param_")]
        if ok:
            plot_tradeoff(ok, str(out / "tradeoff.png"), label_key=params[0] if params else None)
            made.append("tradeoff.png")
        for param in params:
            values = {r[param] for r in ok}
            if len(values) > 1 and all(isinstance(v, (int, float)) for v in values):
                name = f"sweep_{param.removeprefix('param_')}.png"
                plot_size_sweep(ok, param, str(out / name))
                made.append(name)

    matrix_path = src / "matrix.csv"
    if matrix_path.exists():
        rows = read_csv_rows(str(matrix_path))
        for value in ("asr", "acc"):
            plot_matrix(rows, str(out / f"matrix_{value}.png"), value=value)
            made.append(f"matrix_{value}.png")

    report_path = src / "report.csv"
    if report_path.exists():
        plot_tradeoff(read_csv_rows(str(report_path)), str(out / "tradeoff.png"))
        if "tradeoff.png" not in made:
            made.append("tradeoff.png")

    return made


def cmd_report(args) -> int:
    src = Path(args.run)
    if not src.is_dir():
        raise ConfigError(f"run directory not found: {src}")
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"not a finished run directory (no manifest): {src}")
    chash = json.loads(manifest_path.read_text())["config_hash"]

    out = create_run_dir("report", chash, args.runs)
    started = time.perf_counter()
    made = _render_reports(src, out)
    if not made:
        out.rmdir()
        raise ConfigError(f"no renderable CSVs found in {src}")

    notes = {"source": str(src), "rendered": made}
    write_manifest(out, "report", chash, time.perf_counter() - started, notes)
    for name in made:
        print(f"rendered {name}")
    print(f"run directory: {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchtrap",
        description="Train, physically calibrate, and evaluate sidebar backdoor patches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument(
            "--runs",
            default=None,
            help="run-root directory (default: $PATCHTRAP_RUNS or ./runs)",
        )
        p.set_defaults(func=func)
        return p

    p = command("train-model", cmd_train_model, "Train the frozen victim classifier.")
    p.add_argument("--config", required=True, help="experiment config (YAML)")

    p = command("train", cmd_train, "Optimize a sidebar patch against one or more models.")
    p.add_argument("--config", required=True, help="experiment config (YAML)")
    p.add_argument(
        "--model",
        action="append",
        default=None,
        help="saved model prefix; repeat for joint training (default: train one in-run)",
    )

    p = command("eval", cmd_eval, "Measure ACC and ASR of a trained patch on the test split.")
    p.add_argument("--config", required=True)
    p.add_argument("--model", help="saved model prefix")
    p.add_argument("--patch", help="saved patch prefix")

    p = command("sweep", cmd_sweep, "Train and evaluate one patch per grid point.")
    p.add_argument("--config", required=True)
    p.add_argument("--model", help="saved model prefix")
    p.add_argument(
        "--grid",
        required=True,
        help='JSON object of axis -> values, e.g. \'{"patch_width": [3, 5, 7]}\'',
    )

    p = command("matrix", cmd_matrix, "Pruned-model robustness matrix (train x test ratios).")
    p.add_argument("--config", required=True)
    p.add_argument("--model", help="saved model prefix")
    p.add_argument("--ratios", default="0,0.3,0.5,0.9", help="comma-separated prune ratios")
    p.add_argument(
        "--joint",
        action="append",
        default=None,
        help="extra joint training row, e.g. '0&0.9' (repeatable)",
    )
    p.add_argument("--finetune-epochs", type=int, default=2)

    p = command("ood", cmd_ood, "Score patched frames against detectors and a control set.")
    p.add_argument("--config", required=True)
    p.add_argument("--model", help="saved model prefix")
    p.add_argument("--patch", help="saved patch prefix")

    p = command("probe", cmd_probe, "Activation-clustering probe over target-class frames.")
    p.add_argument("--config", required=True)
    p.add_argument("--model", help="saved model prefix")
    p.add_argument("--patch", help="saved patch prefix")

    p = command("poison-baseline", cmd_poison_baseline, "Label-poisoning reference attack.")
    p.add_argument("--config", required=True)
    p.add_argument("--ratio", type=float, default=0.1, help="fraction of training images")

    p = command("board", cmd_board, "Render a calibration board and its geometry.")
    p.add_argument("--grid", type=int, default=4, help="cells per side")
    p.add_argument("--lattice", type=int, default=6, help="color levels per channel")
    p.add_argument("--cell-pixels", type=int, default=64)
    p.add_argument("--marker-pixels", type=int, default=6)

    p = command("fit-transform", cmd_fit_transform, "Fit the printable-to-observed transform.")
    p.add_argument("--board", required=True, help="rendered board image (PNG)")
    p.add_argument("--photo", required=True, help="observed photo of the board (PNG)")
    p.add_argument("--geometry", required=True, help="board geometry JSON")
    p.add_argument("--corr", required=True, help="cell-corner correspondences JSON")
    p.add_argument("--environment", default="attack-env", help="label stored in the artifact")
    p.add_argument("--color-mode", choices=("pairs", "aligned"), default="pairs")

    p = command("report", cmd_report, "Render figures from a finished run's CSVs.")
    p.add_argument("--run", required=True, help="source run directory")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PatchTrapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
