"""Experiment configuration: schema, exhaustive validation, content digests.

Configs are JSON documents with a ``schema_version``. Validation collects
every problem before reporting, so a bad config fails once with the full
list instead of dying on the first field. The digest is a SHA-256 over the
canonicalized document and identifies a run.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

SCHEMA_VERSION = 1

TASKS = ("classification", "regression")
DATASET_KINDS = ("spiral", "idx", "table")
METHODS = ("kd", "hydra")
ACTIVATIONS = ("relu", "softplus")
OPTIMIZERS = ("sgd", "adam")
SHIFT_KINDS = ("rotate", "translate_cyclic", "scale")


def canonical_json(document: dict) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def config_digest(document: dict) -> str:
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()


@dataclass
class ExperimentConfig:
    """A validated experiment description plus its content digest."""

    raw: dict
    digest: str

    # -- derived accessors (defaults live here, not in the digest) ----------

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def task(self) -> str:
        return self.raw["task"]

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    @property
    def split(self) -> dict:
        return self.raw.get(
            "split", {"fractions": [0.8, 0.1, 0.1], "seed": self.seed + 1}
        )

    @property
    def standardize(self) -> bool:
        return bool(self.raw.get("standardize", False))

    @property
    def ensemble(self) -> dict:
        return self.raw.get("ensemble", {})

    @property
    def student(self) -> dict:
        return self.raw.get("student", {})

    @property
    def optimizer(self) -> dict:
        return self.raw.get("optimizer", {})

    @property
    def shift_sweep(self) -> list[dict]:
        return self.raw.get("shift_sweep", [{"kind": "scale", "intensity": 0.0}])

    @property
    def image_shape(self) -> tuple[int, int] | None:
        shape = self.raw.get("image_shape")
        return None if shape is None else (int(shape[0]), int(shape[1]))


def _as_number(value):
    try:
        number = float(value)
    except (TypeError, ValueError):
        return None
    return number if np.isfinite(number) else None


def _validate(raw: dict) -> list[str]:
    errors: list[str] = []

    def bad(msg: str) -> None:
        errors.append(msg)

    def number(section: str, mapping: dict, key: str, default):
        value = _as_number(mapping.get(key, default))
        if value is None:
            bad(f"{section}.{key} must be a finite number, got "
                f"{mapping.get(key)!r}")
        return value

    if raw.get("schema_version") != SCHEMA_VERSION:
        bad(f"schema_version must be {SCHEMA_VERSION}, got "
            f"{raw.get('schema_version')!r}")
    task = raw.get("task")
    if task not in TASKS:
        bad(f"task must be one of {TASKS}, got {task!r}")

    dataset = raw.get("dataset")
    if not isinstance(dataset, dict):
        bad("dataset section is required")
        dataset = {}
    kind = dataset.get("kind")
    if kind not in DATASET_KINDS:
        bad(f"dataset.kind must be one of {DATASET_KINDS}, got {kind!r}")
    elif kind == "spiral":
        if task == "regression":
            bad("spiral dataset is classification-only")
        n_classes = number("dataset", dataset, "n_classes", 4)
        if n_classes is not None and n_classes < 2:
            bad("dataset.n_classes must be >= 2")
        n_per_class = number("dataset", dataset, "n_per_class", 500)
        if n_per_class is not None and n_per_class < 0:
            bad("dataset.n_per_class must be >= 0")
        noise = number("dataset", dataset, "noise_std", 0.1)
        if noise is not None and noise < 0:
            bad("dataset.noise_std must be >= 0")
    elif kind == "idx":
        for key in ("images", "labels"):
            if key not in dataset:
                bad(f"dataset.{key} path is required for idx datasets")
            elif not Path(dataset[key]).exists():
                bad(f"dataset.{key} does not exist: {dataset[key]}")
    elif kind == "table":
        if "path" not in dataset:
            bad("dataset.path is required for table datasets")
        elif not Path(dataset["path"]).exists():
            bad(f"dataset.path does not exist: {dataset['path']}")
        if "target_column" not in dataset:
            bad("dataset.target_column is required for table datasets")

    split = raw.get("split", {})
    fractions = split.get("fractions", [0.8, 0.1, 0.1])
    parsed = [_as_number(f) for f in fractions]
    if len(fractions) != 3 or any(f is None for f in parsed):
        bad(f"split.fractions must be 3 numbers, got {fractions}")
    elif any(f < 0 for f in parsed) or abs(sum(parsed) - 1.0) > 1e-9:
        bad(f"split.fractions must be non-negative and sum to 1, got {fractions}")

    ensemble = raw.get("ensemble", {})
    n_members = number("ensemble", ensemble, "n_members", 10)
    if n_members is not None and n_members < 1:
        bad("ensemble.n_members must be >= 1")
    seeds = ensemble.get("seeds")
    if seeds is not None and len(set(seeds)) != len(seeds):
        bad(f"ensemble.seeds must be distinct, got {seeds}")
    if seeds is not None and len(seeds) != int(ensemble.get("n_members", len(seeds))):
        bad("ensemble.seeds length must equal ensemble.n_members")
    for section_name, section in (("ensemble", ensemble), ("student", raw.get("student", {}))):
        act = section.get("activation")
        if act is not None and act not in ACTIVATIONS:
            bad(f"{section_name}.activation must be one of {ACTIVATIONS}, got {act!r}")
        for key in ("hidden_layers", "body_hidden", "head_hidden"):
            dims = section.get(key)
            if dims is not None and (
                not dims or any(int(d) < 1 for d in dims)
            ):
                bad(f"{section_name}.{key} must be a non-empty list of positive ints")

    student = raw.get("student", {})
    method = student.get("method", "hydra")
    if method not in METHODS:
        bad(f"student.method must be one of {METHODS}, got {method!r}")
    temperature = number("student", student, "temperature", 2.0)
    if temperature is not None and temperature <= 0:
        bad("student.temperature must be > 0")
    for key in ("phase1_epochs", "phase2_epochs"):
        epochs = number("student", student, key, 0)
        if epochs is not None and epochs < 0:
            bad(f"student.{key} must be >= 0")

    optimizer = raw.get("optimizer", {})
    if optimizer.get("kind", "adam") not in OPTIMIZERS:
        bad(f"optimizer.kind must be one of {OPTIMIZERS}")
    lr = number("optimizer", optimizer, "learning_rate", 1e-3)
    if lr is not None and lr <= 0:
        bad("optimizer.learning_rate must be > 0")
    batch = number("optimizer", optimizer, "batch_size", 32)
    if batch is not None and batch < 1:
        bad("optimizer.batch_size must be >= 1")
    epochs = number("optimizer", optimizer, "max_epochs", 200)
    if epochs is not None and epochs < 0:
        bad("optimizer.max_epochs must be >= 0")
    patience = number("optimizer", optimizer, "patience", 20)
    if patience is not None and patience < 1:
        bad("optimizer.patience must be >= 1")

    image_shape = raw.get("image_shape")
    if image_shape is not None and (
        len(image_shape) != 2
        or any(_as_number(v) is None or _as_number(v) < 1 for v in image_shape)
    ):
        bad(f"image_shape must be [height, width], got {image_shape}")
    for i, spec in enumerate(raw.get("shift_sweep", [])):
        kind = spec.get("kind")
        if kind not in SHIFT_KINDS:
            bad(f"shift_sweep[{i}].kind must be one of {SHIFT_KINDS}, got {kind!r}")
        if _as_number(spec.get("intensity")) is None:
            bad(f"shift_sweep[{i}].intensity must be a finite number")
        if kind in ("rotate", "translate_cyclic") and image_shape is None:
            bad(f"shift_sweep[{i}] ({kind}) requires a top-level image_shape")
    return errors


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Validate a config document; raises :class:`ConfigError` listing every
    problem at once."""
    if seed_override is not None:
        raw = dict(raw)
        raw["seed"] = int(seed_override)
    errors = _validate(raw)
    if errors:
        raise ConfigError(
            "invalid config:\n" + "\n".join(f"  - {e}" for e in errors)
        )
    return ExperimentConfig(raw=raw, digest=config_digest(raw))


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(raw, seed_override)


@dataclass
class RunRecord:
    """What a CLI run produced: one cell per (model, shift) plus metadata.

    Timings and timestamps live only here, never in report files, so
    reports stay byte-identical across reruns.
    """

    command: str
    config_digest: str
    cells: list[dict] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    timings_sec: dict = field(default_factory=dict)
    started_at: float = field(default_factory=time.time)

    def add_cell(self, **fields) -> None:
        self.cells.append(fields)

    def save(self, path) -> None:
        doc = {
            "command": self.command,
            "config_digest": self.config_digest,
            "cells": self.cells,
            "artifacts": self.artifacts,
            "timings_sec": self.timings_sec,
            "started_at": self.started_at,
            "finished_at": time.time(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
