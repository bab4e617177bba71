"""Pipeline glue between configs, estimators, and report files.

Everything here is deterministic given the config: reports are written with
a fixed float format and carry no timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .datasets import (
    Dataset,
    ShiftSpec,
    apply_shift,
    load_idx_dataset,
    load_regression_table,
    make_spiral,
    standardize,
    train_val_test_split,
    Standardizer,
)
from .distill import (
    HydraClassifier,
    HydraRegressor,
    KDClassifier,
    KDRegressor,
    HYDRA_FORMAT,
)
from .ensemble import (
    DeepEnsembleClassifier,
    DeepEnsembleRegressor,
    ENSEMBLE_FORMAT,
)
from .exceptions import CheckpointError, ConfigError, ValidationError
from .metrics import (
    decompose_batch,
    mu_gap,
    summarize_classification,
    summarize_regression,
)
from .network import load_mlp

_FLOAT_FMT = ".10g"


def format_cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, str):
        return value
    return format(float(value), _FLOAT_FMT)


def write_table(path, header: list[str], rows: list[list]) -> None:
    """Write a tab-separated table with a header row, deterministically."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(format_cell(v) for v in row) + "\n")


@dataclass
class PreparedData:
    """Train/val/test splits plus the scaler that produced them."""

    train: Dataset
    val: Dataset
    test: Dataset
    scaler: Standardizer | None


def build_dataset(config: ExperimentConfig) -> Dataset:
    spec = config.dataset
    kind = spec["kind"]
    if kind == "spiral":
        return make_spiral(
            n_per_class=int(spec.get("n_per_class", 500)),
            n_classes=int(spec.get("n_classes", 4)),
            noise_std=float(spec.get("noise_std", 0.1)),
            seed=int(spec.get("seed", config.seed + 1)),
            radius=float(spec.get("radius", 4.0)),
        )
    if kind == "idx":
        return load_idx_dataset(spec["images"], spec["labels"])
    if kind == "table":
        return load_regression_table(spec["path"], spec["target_column"])
    raise ConfigError(f"unknown dataset kind {kind!r}")


def prepare_data(config: ExperimentConfig) -> PreparedData:
    dataset = build_dataset(config)
    split = config.split
    train, val, test = train_val_test_split(
        dataset,
        split.get("fractions", [0.8, 0.1, 0.1]),
        int(split.get("seed", config.seed + 2)),
    )
    scaler = None
    if config.standardize:
        train, (val, test), scaler = standardize(train, [val, test])
    return PreparedData(train, val, test, scaler)


def build_ensemble(config: ExperimentConfig):
    section = config.ensemble
    opt = config.optimizer
    cls = (
        DeepEnsembleClassifier
        if config.task == "classification"
        else DeepEnsembleRegressor
    )
    default_act = "relu" if config.task == "classification" else "softplus"
    default_hidden = (100, 100) if config.task == "classification" else (50,)
    return cls(
        hidden_layers=tuple(section.get("hidden_layers", default_hidden)),
        activation=section.get("activation", default_act),
        n_members=int(section.get("n_members", 10)),
        seeds=section.get("seeds"),
        seed=int(section.get("seed", config.seed + 3)),
        learning_rate=float(opt.get("learning_rate", 1e-3)),
        batch_size=int(opt.get("batch_size", 32)),
        max_epochs=int(opt.get("max_epochs", 200)),
        patience=int(opt.get("patience", 20)),
        optimizer=opt.get("kind", "adam"),
    )


def build_student(config: ExperimentConfig, method: str, teacher):
    section = config.student
    opt = config.optimizer
    default_act = "relu" if config.task == "classification" else "softplus"
    common = dict(
        teacher=teacher,
        activation=section.get("activation", default_act),
        learning_rate=float(opt.get("learning_rate", 1e-3)),
        batch_size=int(opt.get("batch_size", 32)),
        patience=int(opt.get("patience", 20)),
        optimizer=opt.get("kind", "adam"),
        seed=int(section.get("seed", config.seed + 4)),
    )
    ens_hidden = tuple(
        config.ensemble.get(
            "hidden_layers",
            (100, 100) if config.task == "classification" else (50,),
        )
    )
    if method == "kd":
        cls = KDClassifier if config.task == "classification" else KDRegressor
        kwargs = dict(
            common,
            hidden_layers=tuple(section.get("hidden_layers", ens_hidden)),
            max_epochs=int(opt.get("max_epochs", 200)),
        )
        if config.task == "classification":
            kwargs["temperature"] = float(section.get("temperature", 2.0))
        return cls(**kwargs)
    if method == "hydra":
        cls = HydraClassifier if config.task == "classification" else HydraRegressor
        # body defaults to the member architecture, heads to its last width
        body_hidden = tuple(section.get("body_hidden", ens_hidden))
        head_hidden = tuple(section.get("head_hidden", (ens_hidden[-1],)))
        kwargs = dict(
            common,
            body_hidden=body_hidden,
            head_hidden=head_hidden,
            phase1_epochs=int(section.get("phase1_epochs",
                                          opt.get("max_epochs", 200))),
            phase2_epochs=int(section.get("phase2_epochs",
                                          opt.get("max_epochs", 200))),
        )
        if config.task == "classification":
            kwargs["temperature"] = float(section.get("temperature", 2.0))
        return cls(**kwargs)
    raise ConfigError(f"unknown method {method!r}")


def load_model(path):
    """Load any persisted model and report (estimator, task, kind)."""
    p = Path(path)
    if p.is_dir():
        manifest_path = p / "manifest.json"
        if not manifest_path.exists():
            raise CheckpointError(f"no manifest.json in {p}")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            try:
                manifest = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CheckpointError(f"corrupt manifest in {p}: {exc}") from exc
        fmt = manifest.get("format")
        task = manifest.get("task")
        if fmt == ENSEMBLE_FORMAT:
            cls = (
                DeepEnsembleClassifier
                if task == "classification"
                else DeepEnsembleRegressor
            )
            return cls.load(p), task, "ensemble"
        if fmt == HYDRA_FORMAT:
            cls = HydraClassifier if task == "classification" else HydraRegressor
            return cls.load(p), task, "hydra"
        raise CheckpointError(f"unrecognized model directory format {fmt!r}")
    if not p.exists():
        raise CheckpointError(f"model path not found: {p}")
    _, meta = load_mlp(p)
    task = meta.get("task")
    if task == "classification":
        return KDClassifier.load(p), task, "kd"
    if task == "regression":
        return KDRegressor.load(p), task, "kd"
    raise CheckpointError(f"{p} does not declare a task")


def _model_uncertainty(model, x: np.ndarray) -> np.ndarray:
    return decompose_batch(model.predict_member_proba(x))[2]


EVAL_COLUMNS = [
    "model",
    "shift_kind",
    "shift_intensity",
    "accuracy",
    "nll",
    "brier",
    "mean_total_uncertainty",
    "mean_expected_data_uncertainty",
    "mean_model_uncertainty",
]


def shift_specs(config: ExperimentConfig) -> list[ShiftSpec]:
    return [
        ShiftSpec(
            kind=entry["kind"],
            intensity=float(entry["intensity"]),
            image_shape=config.image_shape,
        )
        for entry in config.shift_sweep
    ]


PER_EXAMPLE_FIELDS = [
    "correct",
    "nll",
    "brier",
    "total_uncertainty",
    "expected_data_uncertainty",
    "model_uncertainty",
]


def evaluate_cell(model, task: str, shifted: Dataset,
                  scaler: Standardizer | None, teacher=None):
    """All metrics for one model on one (already shifted) dataset.

    Returns the report-row dict and the underlying :class:`MetricReport`
    (which carries per-example values).
    """
    if task == "classification":
        report = summarize_classification(
            model.predict_member_proba(shifted.x), shifted.y
        )
        if teacher is not None:
            report.mu_gap = mu_gap(
                report.per_example["model_uncertainty"],
                _model_uncertainty(teacher, shifted.x),
            )
    else:
        means, variances = model.predict_member_gaussians(shifted.x)
        y = shifted.y
        if scaler is not None:
            means, variances = scaler.destandardize_gaussians(means, variances)
            y = scaler.inverse_transform_targets(y)
        report = summarize_regression(means, variances, y)
    cell = {
        "accuracy": report.accuracy,
        "nll": report.nll,
        "brier": report.brier,
        "mean_total_uncertainty": report.mean_total_uncertainty,
        "mean_expected_data_uncertainty": report.mean_expected_data_uncertainty,
        "mean_model_uncertainty": report.mean_model_uncertainty,
    }
    if report.mu_gap is not None:
        cell["mu_gap"] = report.mu_gap
    return cell, report


def evaluate_model(model, task: str, model_name: str, dataset: Dataset,
                   specs: list[ShiftSpec], scaler: Standardizer | None = None,
                   teacher=None):
    """One metrics cell per shift intensity; failures become explicit markers.

    Returns ``(cells, per_example_rows)``; the latter holds one row per
    (shift, example) for the per-example dump.
    """
    cells = []
    per_example_rows = []
    for spec in specs:
        base = {
            "model": model_name,
            "shift_kind": spec.kind,
            "shift_intensity": spec.intensity,
        }
        try:
            shifted = apply_shift(dataset, spec)
            cell, report = evaluate_cell(model, task, shifted, scaler, teacher)
            base.update(cell)
            base["status"] = "ok"
            values = report.per_example or {}
            n = len(next(iter(values.values()))) if values else 0
            for i in range(n):
                row = [spec.kind, spec.intensity, i]
                row.extend(
                    float(values[field][i]) if field in values else None
                    for field in PER_EXAMPLE_FIELDS
                )
                per_example_rows.append(row)
        except Exception as exc:  # cell failure must not hide the rest
            base["status"] = f"failed: {exc}"
            for column in EVAL_COLUMNS[3:]:
                base.setdefault(column, "failed")
            if teacher is not None:
                base.setdefault("mu_gap", "failed")
        cells.append(base)
    return cells, per_example_rows


def write_evaluation_report(path, cells: list[dict],
                            include_mu_gap: bool) -> None:
    header = list(EVAL_COLUMNS) + (["mu_gap"] if include_mu_gap else [])
    rows = [[cell.get(col) for col in header] for cell in cells]
    write_table(path, header, rows)


def write_per_example_dump(path, per_example_rows: list[list]) -> None:
    write_table(
        path,
        ["shift_kind", "shift_intensity", "example"] + PER_EXAMPLE_FIELDS,
        per_example_rows,
    )


def uncertainty_grid(model, bounds: tuple[float, float], resolution: int):
    """Uncertainty decomposition on a square lattice for a 2-D input model.

    Returns (points, total, expected, model_uncertainty); points are raster
    ordered (y varies across rows of the lattice, x fastest).
    """
    if not hasattr(model, "predict_member_proba"):
        raise ValidationError(
            "uncertainty grids need a classification model with per-member "
            "probabilities"
        )
    input_dim = getattr(model, "n_features_in_", None)
    if input_dim != 2:
        raise ValidationError(
            f"uncertainty grids need a 2-D input model, got input dim {input_dim}"
        )
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise ConfigError(f"bounds must satisfy lo < hi, got ({lo}, {hi})")
    resolution = int(resolution)
    if resolution < 2:
        raise ConfigError(f"resolution must be >= 2, got {resolution}")
    axis = np.linspace(lo, hi, resolution)
    xx, yy = np.meshgrid(axis, axis)  # row-major: y per row, x fastest
    points = np.column_stack([xx.ravel(), yy.ravel()])
    member_probs = model.predict_member_proba(points)
    total, expected, model_unc = decompose_batch(member_probs)
    return points, total, expected, model_unc


def write_uncertainty_grid(path, model, bounds, resolution) -> None:
    points, total, expected, model_unc = uncertainty_grid(model, bounds, resolution)
    rows = [
        [points[i, 0], points[i, 1], total[i], expected[i], model_unc[i]]
        for i in range(points.shape[0])
    ]
    write_table(
        path,
        ["x", "y", "total_uncertainty", "expected_data_uncertainty",
         "model_uncertainty"],
        rows,
    )


def default_grid_bounds(dataset: Dataset, margin: float = 1.5):
    """Square bounds covering the data bounding box scaled by ``margin``."""
    span = max(abs(float(dataset.x.min())), abs(float(dataset.x.max())))
    return (-margin * span, margin * span)
