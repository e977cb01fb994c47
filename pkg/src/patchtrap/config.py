"""Experiment configuration and run provenance.

A config file is one YAML document with a mandatory top-level ``seed`` and
seven optional sections (model, dataset, layout, trigger, train, transforms,
eval). Field names inside each section match the owning type exactly, so the
schema below is the single place where a rename would have to be mirrored.
Unknown keys are rejected with their full path; all downstream randomness
derives from the one seed.

The config hash is the SHA-256 of the canonical JSON serialization of the
fully defaulted document, so two files that differ only in formatting or in
spelled-out defaults produce the same run identity.
"""

from __future__ import annotations

import hashlib
import importlib.metadata
import json
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .compositor import Layout, TriggerSpec
from .data import SyntheticSpec
from .errors import ConfigError, PatchTrapError
from .models import ConvNetConfig
from .objective import TrainConfig
from .phystransform import EnvTransforms, PhysicalTransform
from .seeding import derive_seed

RUN_ROOT_ENV = "PATCHTRAP_RUNS"

# Section schemas: field -> default. Optional fields (default None) list their
# accepted non-null type separately below.
_SCHEMA: dict[str, dict] = {
    "model": {
        "channels": [32, 64, 128, 128],
        "epochs": 15,
        "lr": 1e-3,
        "batch_size": 128,
    },
    "dataset": {
        "num_classes": 10,
        "image_size": 32,
        "n_train": 3000,
        "n_test": 1000,
        "noise": 0.06,
        "grating_cycles": 2.5,
        "amplitude": [0.30, 0.45],
    },
    "layout": {
        "frame_height": 32,
        "frame_width": 32,
        "patch_width": 7,
    },
    "trigger": {
        "kind": "square",
        "width": 3,
        "color": [1.0, 1.0, 1.0],
        "placement": "adjacent",
        "row": None,
        "col": None,
        "delta": 0.3,
    },
    "train": {
        "target_class": 0,
        "alpha": 0.5,
        "alpha_policy": "fixed",
        "iterations": 2000,
        "batch_size": 64,
        "lr": 1e-2,
        "lr_schedule": "cosine",
        "eval_interval": 50,
        "val_fraction": 0.1,
        "checkpoint_interval": 0,
        "ema_decay": 0.9,
    },
    "transforms": {
        "clean": None,
        "attack": None,
    },
    "eval": {
        "batch_size": 256,
    },
}

_OPTIONAL_TYPES = {
    "trigger.row": int,
    "trigger.col": int,
    "transforms.clean": str,
    "transforms.attack": str,
}


def _check_value(path: str, value, default) -> object:
    """Type-check one field against its default; floats accept ints."""
    if default is None:
        expect = _OPTIONAL_TYPES[path]
        if value is None or (isinstance(value, expect) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"{path}: expected {expect.__name__} or null, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected list, got {value!r}")
        return [
            _check_value(f"{path}[{i}]", item, default[0] if default else item)
            for i, item in enumerate(value)
        ]
    raise ConfigError(f"{path}: unsupported schema entry")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully defaulted experiment document."""

    seed: int
    model: dict
    dataset: dict
    layout: dict
    trigger: dict
    train: dict
    transforms: dict
    eval: dict

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        known = set(_SCHEMA) | {"seed"}
        for key in raw:
            if key not in known:
                raise ConfigError(f"{key}: unknown top-level key")
        if "seed" not in raw:
            raise ConfigError("seed: required top-level key is missing")
        seed = raw["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError(f"seed: expected int, got {seed!r}")

        sections = {}
        for name, schema in _SCHEMA.items():
            given = raw.get(name, {})
            if given is None:
                given = {}
            if not isinstance(given, dict):
                raise ConfigError(f"{name}: expected a mapping, got {given!r}")
            for key in given:
                if key not in schema:
                    raise ConfigError(f"{name}.{key}: unknown key")
            sections[name] = {
                key: _check_value(f"{name}.{key}", given.get(key, default), default)
                if key in given
                else (list(default) if isinstance(default, list) else default)
                for key, default in schema.items()
            }

        config = cls(seed=seed, **sections)
        config.validate()
        return config

    def validate(self) -> None:
        """Construct every domain object once so range errors surface early."""
        try:
            layout = self.build_layout()
            self.build_trigger()
            self.build_train_config(layout)
            self.build_dataset_spec()
            self.build_arch()
        except ConfigError:
            raise
        except PatchTrapError as exc:
            raise ConfigError(str(exc)) from exc
        if self.train["target_class"] >= self.dataset["num_classes"]:
            raise ConfigError(
                f"train.target_class: {self.train['target_class']} is out of range "
                f"for dataset.num_classes={self.dataset['num_classes']}"
            )
        if self.layout["frame_height"] != self.dataset["image_size"] or self.layout[
            "frame_width"
        ] != self.dataset["image_size"]:
            raise ConfigError(
                "layout frame dimensions must equal dataset.image_size "
                f"({self.dataset['image_size']})"
            )

    def document(self) -> dict:
        return {
            "seed": self.seed,
            "model": dict(self.model),
            "dataset": dict(self.dataset),
            "layout": dict(self.layout),
            "trigger": dict(self.trigger),
            "train": dict(self.train),
            "transforms": dict(self.transforms),
            "eval": dict(self.eval),
        }

    def canonical(self) -> str:
        return json.dumps(self.document(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    # Builders keep the CLI thin: each returns the owning module's type.

    def build_dataset_spec(self) -> SyntheticSpec:
        d = self.dataset
        return SyntheticSpec(
            num_classes=d["num_classes"],
            image_size=d["image_size"],
            n_train=d["n_train"],
            n_test=d["n_test"],
            noise=d["noise"],
            seed=derive_seed(self.seed, "dataset"),
            grating_cycles=d["grating_cycles"],
            amplitude=tuple(d["amplitude"]),
        )

    def build_layout(self) -> Layout:
        return Layout(
            frame_height=self.layout["frame_height"],
            frame_width=self.layout["frame_width"],
            patch_width=self.layout["patch_width"],
        )

    def build_trigger(self) -> TriggerSpec:
        t = self.trigger
        return TriggerSpec(
            kind=t["kind"],
            width=t["width"],
            color=tuple(t["color"]),
            placement=t["placement"],
            row=t["row"],
            col=t["col"],
            delta=t["delta"],
        )

    def build_arch(self) -> ConvNetConfig:
        return ConvNetConfig(
            channels=tuple(self.model["channels"]),
            num_classes=self.dataset["num_classes"],
        )

    def build_train_config(
        self, layout: Layout, transforms: EnvTransforms | None = None
    ) -> TrainConfig:
        t = self.train
        return TrainConfig(
            layout=layout,
            target_class=t["target_class"],
            alpha=t["alpha"],
            alpha_policy=t["alpha_policy"],
            iterations=t["iterations"],
            batch_size=t["batch_size"],
            lr=t["lr"],
            lr_schedule=t["lr_schedule"],
            seed=derive_seed(self.seed, "patch-train"),
            eval_interval=t["eval_interval"],
            val_fraction=t["val_fraction"],
            checkpoint_interval=t["checkpoint_interval"],
            ema_decay=t["ema_decay"],
            transforms=transforms,
        )

    def load_transforms(self, base_dir: str | Path = ".") -> EnvTransforms | None:
        """Resolve transform artifact paths (relative to the config file)."""

        def resolve(entry: str | None) -> PhysicalTransform | None:
            if entry is None:
                return None
            path = Path(entry)
            if not path.is_absolute():
                path = Path(base_dir) / path
            if not path.exists():
                raise ConfigError(f"transforms: artifact not found: {path}")
            return PhysicalTransform.load(str(path))

        clean = resolve(self.transforms["clean"])
        attack = resolve(self.transforms["attack"])
        if clean is None and attack is None:
            return None
        return EnvTransforms(clean=clean, attack=attack)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    return ExperimentConfig.from_mapping(raw)


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def collect_versions() -> dict[str, str]:
    names = ("patchtrap", "torch", "numpy", "scikit-learn", "matplotlib", "PyYAML", "Pillow")
    versions = {}
    for name in names:
        try:
            versions[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def host_info() -> dict[str, str]:
    return {
        "node": platform.node(),
        "platform": platform.platform(),
        "python": platform.python_version(),
    }


@dataclass
class RunManifest:
    """Ledger of one command invocation; the only place wall-clock lives."""

    command: str
    config_hash: str
    created: str
    seconds: float
    host: dict = field(default_factory=host_info)
    versions: dict = field(default_factory=collect_versions)
    artifacts: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "created": self.created,
            "seconds": self.seconds,
            "host": self.host,
            "versions": self.versions,
            "artifacts": self.artifacts,
            "notes": self.notes,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "RunManifest":
        doc = json.loads(Path(path).read_text())
        return RunManifest(**doc)


def run_root(override: str | Path | None = None) -> Path:
    if override is not None:
        return Path(override)
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def create_run_dir(command: str, config_hash: str, root: str | Path | None = None) -> Path:
    """Allocate a fresh write-once directory named by command and hash prefix.

    Re-running the same config never reuses an existing directory; a numeric
    suffix disambiguates repeats.
    """
    base = run_root(root)
    base.mkdir(parents=True, exist_ok=True)
    name = f"{command}-{config_hash[:12]}"
    candidate = base / name
    counter = 2
    while candidate.exists():
        candidate = base / f"{name}-{counter}"
        counter += 1
    candidate.mkdir()
    return candidate


def write_manifest(
    run_dir: str | Path,
    command: str,
    config_hash: str,
    seconds: float,
    notes: dict | None = None,
) -> RunManifest:
    """Hash every file in the run directory and drop manifest.json beside them."""
    run_dir = Path(run_dir)
    artifacts = {}
    for item in sorted(run_dir.rglob("*")):
        if item.is_file() and item.name != "manifest.json":
            artifacts[str(item.relative_to(run_dir))] = file_digest(item)
    manifest = RunManifest(
        command=command,
        config_hash=config_hash,
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        seconds=round(seconds, 3),
        artifacts=artifacts,
        notes=notes or {},
    )
    manifest.save(run_dir / "manifest.json")
    return manifest
