"""Distillation engines: single-head students and multi-headed students.

A multi-headed student (method ``hydra``) holds one shared body network and
M head networks, head m trained to mimic teacher member m. Training runs in
two phases: first the body plus a single head against the teacher's
averaged prediction, then, after cloning that head M times, all parameters
against the per-member targets. The single-head baseline (method ``kd``)
trains one network against the averaged prediction only.

Teacher targets are computed once from the frozen ensemble and cached, in
memory always and on disk when a cache directory is supplied.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._training import EpochRecord, TrainSettings, train_multi_head, train_network
from .exceptions import (
    CheckpointError,
    ConfigError,
    ValidationError,
)
from .losses import _tempered_cross_entropy, temper_probabilities
from .network import (
    Mlp,
    build_mlp,
    chain_logvar_grad,
    load_mlp,
    save_mlp,
    tempered_softmax,
    variance_from_raw,
)
from .validation import check_matrix, check_temperature

HYDRA_FORMAT = "hydra"
HYDRA_VERSION = 1
KD_STUDENT_KIND = "kd-student"

TASKS = ("classification", "regression")


class Hydra:
    """A multi-headed student: one shared body plus M heads.

    Every head maps the body's output to the task outputs; heads share
    their output dimension. ``temperature`` is the training-time softmax
    temperature (evaluation always uses 1).
    """

    def __init__(self, body: Mlp, heads: Sequence[Mlp], task: str,
                 temperature: float = 1.0):
        heads = list(heads)
        if not heads:
            raise ValidationError("a multi-headed student needs at least one head")
        for i, head in enumerate(heads):
            if head.input_dim != body.output_dim:
                raise ValidationError(
                    f"head {i} input dim {head.input_dim} does not match body "
                    f"output dim {body.output_dim}"
                )
            if head.output_dim != heads[0].output_dim:
                raise ValidationError("heads must share their output dimension")
        if task not in TASKS:
            raise ValidationError(f"unknown task {task!r}")
        self.body = body
        self.heads = heads
        self.task = task
        self.temperature = check_temperature(temperature)

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def input_dim(self) -> int:
        return self.body.input_dim

    @property
    def output_dim(self) -> int:
        return self.heads[0].output_dim

    def copy(self) -> "Hydra":
        return Hydra(
            self.body.copy(),
            [h.copy() for h in self.heads],
            self.task,
            self.temperature,
        )

    def forward_members(self, x) -> np.ndarray:
        """Raw outputs of every head; shape (M, N, out) for a batch."""
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        features = self.body.forward(arr.reshape(1, -1) if single else arr)
        stacked = np.stack([head.forward(features) for head in self.heads])
        return stacked[:, 0, :] if single else stacked


def grow_heads(student: Hydra, n_heads_target: int) -> Hydra:
    """Clone the single trained head into ``n_heads_target`` identical heads.

    The input must have exactly one head (the phase-1 student); the result's
    heads are deep copies of it, so immediately after growth every head
    produces bitwise identical outputs and the student's model uncertainty
    is exactly zero everywhere.
    """
    if int(n_heads_target) < 1:
        raise ConfigError(f"target head count must be >= 1, got {n_heads_target}")
    if student.n_heads != 1:
        raise ValidationError(
            f"grow_heads expects a single-head student, got {student.n_heads} heads"
        )
    return Hydra(
        student.body.copy(),
        [student.heads[0].copy() for _ in range(int(n_heads_target))],
        student.task,
        student.temperature,
    )


# ---------------------------------------------------------------------------
# teacher targets and caching


def dataset_digest(x: np.ndarray) -> str:
    """Content hash of an input matrix."""
    h = hashlib.sha256()
    h.update(str(x.shape).encode())
    h.update(np.ascontiguousarray(x, dtype=np.float64).tobytes())
    return h.hexdigest()


def teacher_digest(teacher) -> str:
    """Content hash of a fitted ensemble's parameters."""
    h = hashlib.sha256()
    h.update(getattr(teacher, "_task", "?").encode())
    for member in teacher.members_:
        for layer in member.layers:
            h.update(layer.activation.encode())
            h.update(layer.weights.tobytes())
            h.update(layer.bias.tobytes())
    return h.hexdigest()


class TeacherTargetCache:
    """On-disk cache of teacher targets, keyed by dataset and teacher digests."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.npz"

    def load(self, key: str) -> dict[str, np.ndarray] | None:
        path = self._path(key)
        if not path.exists():
            return None
        with np.load(path) as data:
            return {name: data[name] for name in data.files}

    def store(self, key: str, **arrays) -> None:
        np.savez(self._path(key), **arrays)


def _target_key(teacher, x, temperature, task) -> str:
    h = hashlib.sha256()
    h.update(dataset_digest(x).encode())
    h.update(teacher_digest(teacher).encode())
    h.update(float(temperature).hex().encode())
    h.update(task.encode())
    return h.hexdigest()


def classification_targets(teacher, x, temperature, cache=None) -> np.ndarray:
    """Per-member heated teacher distributions, shape (M, N, C)."""
    if cache is not None:
        key = _target_key(teacher, x, temperature, "classification")
        hit = cache.load(key)
        if hit is not None:
            return hit["member_probs"]
    probs = temper_probabilities(teacher.predict_member_proba(x), temperature)
    if cache is not None:
        cache.store(key, member_probs=probs)
    return probs


def regression_targets(teacher, x, cache=None):
    """Per-member teacher Gaussians as (means, variances), each (M, N)."""
    if cache is not None:
        key = _target_key(teacher, x, 1.0, "regression")
        hit = cache.load(key)
        if hit is not None:
            return hit["means"], hit["variances"]
    means, variances = teacher.predict_member_gaussians(x)
    if cache is not None:
        cache.store(key, means=means, variances=variances)
    return means, variances


# ---------------------------------------------------------------------------
# vectorized objectives (single-instance forms live in losses.py)


def _kd_classification_batch(outputs, targets, temperature):
    """Mean KD loss over a batch with gradient in the logits."""
    ce, d_logits = _tempered_cross_entropy(targets, outputs, temperature)
    n = outputs.shape[0]
    return float(temperature**2 * ce.mean()), temperature**2 * d_logits / n


def _kd_regression_batch(outputs, member_means, member_variances):
    """Mean moment-matching loss over a batch; targets are (M, B) arrays."""
    mu = outputs[:, 0]
    var = variance_from_raw(outputs[:, 1])
    sq = member_variances + (member_means - mu) ** 2
    ce = sq / (2.0 * var) + 0.5 * np.log(2.0 * np.pi * var)
    n = outputs.shape[0]
    d = np.zeros_like(outputs)
    d[:, 0] = (mu - member_means.mean(axis=0)) / var / n
    d_var = (-sq / (2.0 * var**2) + 0.5 / var).mean(axis=0)
    d[:, 1] = chain_logvar_grad(var, d_var / n)
    return float(ce.mean()), d


def _per_head_regression_batch(outputs, member_mean, member_variance, n_heads):
    """One head's share of the per-head regression loss."""
    mu = outputs[:, 0]
    var = variance_from_raw(outputs[:, 1])
    sq = member_variance + (member_mean - mu) ** 2
    ce = sq / (2.0 * var) + 0.5 * np.log(2.0 * np.pi * var)
    n = outputs.shape[0]
    d = np.zeros_like(outputs)
    d[:, 0] = (mu - member_mean) / var / (n_heads * n)
    d_var = -sq / (2.0 * var**2) + 0.5 / var
    d[:, 1] = chain_logvar_grad(var, d_var / (n_heads * n))
    return float(ce.mean() / n_heads), d


@dataclass
class HydraGradients:
    """Gradients for a multi-headed student: the body plus one list per head."""

    body: list
    heads: list


# ---------------------------------------------------------------------------
# persistence


def save_hydra(student: Hydra, directory, meta: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": HYDRA_FORMAT,
        "version": HYDRA_VERSION,
        "task": student.task,
        "n_heads": student.n_heads,
        "temperature": float(student.temperature),
        "meta": dict(meta or {}),
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    save_mlp(student.body, directory / "body.json")
    for i, head in enumerate(student.heads):
        save_mlp(head, directory / f"head_{i:03d}.json", meta={"head": i})


def load_hydra(directory) -> tuple[Hydra, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest.json in {directory}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    if manifest.get("format") != HYDRA_FORMAT:
        raise CheckpointError(
            f"not a multi-head student directory (format={manifest.get('format')!r})"
        )
    if manifest.get("version") != HYDRA_VERSION:
        raise CheckpointError(
            f"unsupported version {manifest.get('version')!r}"
        )
    body, _ = load_mlp(directory / "body.json")
    heads = []
    for i in range(int(manifest["n_heads"])):
        path = directory / f"head_{i:03d}.json"
        if not path.exists():
            raise CheckpointError(f"head {i} checkpoint missing from {directory}")
        try:
            head, _ = load_mlp(path)
        except CheckpointError as exc:
            raise CheckpointError(f"head {i}: {exc}") from exc
        heads.append(head)
    student = Hydra(body, heads, manifest["task"], manifest["temperature"])
    return student, dict(manifest.get("meta", {}))


# ---------------------------------------------------------------------------
# estimators


class _StudentBase(BaseEstimator):
    """Shared plumbing for all distillation estimators."""

    _task = None

    def _require_teacher(self):
        if self.teacher is None:
            raise ConfigError("a fitted teacher ensemble is required to fit")
        if getattr(self.teacher, "_task", None) != self._task:
            raise ConfigError(
                f"teacher task {getattr(self.teacher, '_task', None)!r} does not "
                f"match student task {self._task!r}"
            )
        if not hasattr(self.teacher, "members_"):
            raise ConfigError("teacher ensemble is not fitted")
        return self.teacher

    def _settings(self, max_epochs) -> TrainSettings:
        return TrainSettings(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=int(self.batch_size),
            max_epochs=int(max_epochs),
            patience=int(self.patience),
        )

    def _split(self, x, y, validation_data):
        from .datasets import split_indices

        if validation_data is not None:
            x_val = check_matrix(validation_data[0], "validation X", x.shape[1])
            return x, x_val
        frac = float(self.validation_fraction)
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"validation_fraction must be in (0, 1), got {frac}")
        labels = y if (y is not None and self._task == "classification") else None
        idx_train, idx_val = split_indices(
            x.shape[0], [1.0 - frac, frac], int(self.seed), stratify_labels=labels
        )
        if idx_val.size == 0 or idx_train.size == 0:
            raise ConfigError("validation split left train or validation empty")
        return x[idx_train], x[idx_val]

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted")

    def _cache(self):
        return TeacherTargetCache(self.cache_dir) if self.cache_dir else None


class KDClassifier(_StudentBase):
    """Single-network classification student matching the averaged teacher.

    The training objective heats both the averaged teacher distribution and
    the student softmax with the configured temperature and scales the
    cross-entropy by its square; predictions are read at temperature 1.
    """

    _task = "classification"

    def __init__(
        self,
        teacher=None,
        hidden_layers=(100, 100),
        activation="relu",
        temperature=2.0,
        learning_rate=1e-3,
        batch_size=32,
        max_epochs=200,
        patience=20,
        optimizer="adam",
        validation_fraction=0.1,
        seed=0,
        cache_dir=None,
    ):
        self.teacher = teacher
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.cache_dir = cache_dir

    def fit(self, X, y=None, validation_data=None):
        """Distill the teacher on inputs ``X``; labels are only used to
        stratify the internal validation split."""
        teacher = self._require_teacher()
        x = check_matrix(X, "X")
        t = check_temperature(self.temperature)
        x_tr, x_val = self._split(x, y, validation_data)
        cache = self._cache()
        mean_tr = classification_targets(teacher, x_tr, t, cache).mean(axis=0)
        mean_val = classification_targets(teacher, x_val, t, cache).mean(axis=0)
        n_classes = mean_tr.shape[1]
        rng = np.random.default_rng(int(self.seed))
        model = build_mlp(
            [x.shape[1], *map(int, self.hidden_layers), n_classes],
            self.activation, rng,
        )

        def batch_loss(outputs, idx):
            return _kd_classification_batch(outputs, mean_tr[idx], t)

        def val_loss(m):
            return _kd_classification_batch(m.forward(x_val), mean_val, t)[0]

        best, history = train_network(
            model, x_tr, x_val, batch_loss, val_loss,
            self._settings(self.max_epochs), rng, context="kd student",
        )
        self.model_ = best
        self.history_ = history
        self.n_features_in_ = x.shape[1]
        self.n_classes_ = n_classes
        self.teacher_digest_ = teacher_digest(teacher)
        return self

    def predict_member_proba(self, X) -> np.ndarray:
        """Shape (1, N, C): the single student acts as a one-member ensemble."""
        self._require_fitted()
        x = check_matrix(X, "X", n_features=self.model_.input_dim)
        return tempered_softmax(self.model_.forward(x), 1.0)[np.newaxis]

    def predict_proba(self, X) -> np.ndarray:
        return self.predict_member_proba(X)[0]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def save(self, path, extra_meta: dict | None = None) -> None:
        self._require_fitted()
        meta = {
            "kind": KD_STUDENT_KIND,
            "task": self._task,
            "temperature": float(self.temperature),
            "teacher_digest": getattr(self, "teacher_digest_", None),
        }
        meta.update(extra_meta or {})
        save_mlp(self.model_, path, meta=meta)

    @classmethod
    def load(cls, path):
        model, meta = load_mlp(path)
        if meta.get("kind") != KD_STUDENT_KIND or meta.get("task") != cls._task:
            raise CheckpointError(
                f"{path} is not a {cls._task} kd student checkpoint"
            )
        est = cls(temperature=meta.get("temperature", 1.0))
        est.model_ = model
        est.n_features_in_ = model.input_dim
        est.n_classes_ = model.output_dim
        return est


class KDRegressor(_StudentBase):
    """Single-Gaussian regression student moment-matching the teacher mixture."""

    _task = "regression"

    def __init__(
        self,
        teacher=None,
        hidden_layers=(50,),
        activation="softplus",
        learning_rate=1e-3,
        batch_size=32,
        max_epochs=200,
        patience=20,
        optimizer="adam",
        validation_fraction=0.1,
        seed=0,
        cache_dir=None,
    ):
        self.teacher = teacher
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.cache_dir = cache_dir

    def fit(self, X, y=None, validation_data=None):
        teacher = self._require_teacher()
        x = check_matrix(X, "X")
        x_tr, x_val = self._split(x, y, validation_data)
        cache = self._cache()
        means_tr, vars_tr = regression_targets(teacher, x_tr, cache)
        means_val, vars_val = regression_targets(teacher, x_val, cache)
        rng = np.random.default_rng(int(self.seed))
        model = build_mlp(
            [x.shape[1], *map(int, self.hidden_layers), 2], self.activation, rng
        )

        def batch_loss(outputs, idx):
            return _kd_regression_batch(outputs, means_tr[:, idx], vars_tr[:, idx])

        def val_loss(m):
            return _kd_regression_batch(m.forward(x_val), means_val, vars_val)[0]

        best, history = train_network(
            model, x_tr, x_val, batch_loss, val_loss,
            self._settings(self.max_epochs), rng, context="kd student",
        )
        self.model_ = best
        self.history_ = history
        self.n_features_in_ = x.shape[1]
        self.teacher_digest_ = teacher_digest(teacher)
        return self

    def predict_member_gaussians(self, X):
        self._require_fitted()
        x = check_matrix(X, "X", n_features=self.model_.input_dim)
        out = self.model_.forward(x)
        return out[np.newaxis, :, 0], variance_from_raw(out[np.newaxis, :, 1])

    def predict_dist(self, X):
        means, variances = self.predict_member_gaussians(X)
        return means[0], variances[0]

    def predict(self, X) -> np.ndarray:
        return self.predict_dist(X)[0]

    def save(self, path, extra_meta: dict | None = None) -> None:
        self._require_fitted()
        meta = {
            "kind": KD_STUDENT_KIND,
            "task": self._task,
            "temperature": 1.0,
            "teacher_digest": getattr(self, "teacher_digest_", None),
        }
        meta.update(extra_meta or {})
        save_mlp(self.model_, path, meta=meta)

    @classmethod
    def load(cls, path):
        model, meta = load_mlp(path)
        if meta.get("kind") != KD_STUDENT_KIND or meta.get("task") != cls._task:
            raise CheckpointError(f"{path} is not a {cls._task} kd student checkpoint")
        est = cls()
        est.model_ = model
        est.n_features_in_ = model.input_dim
        return est


class _HydraBase(_StudentBase):
    """Two-phase trainer shared by both multi-headed estimators."""

    def _build_parts(self, input_dim, output_dim, rng):
        body_dims = [input_dim, *map(int, self.body_hidden)]
        if len(body_dims) < 2:
            raise ConfigError("body needs at least one layer")
        body = build_mlp(body_dims, self.activation, rng,
                         final_activation=self.activation)
        head = build_mlp(
            [body_dims[-1], *map(int, self.head_hidden), output_dim],
            self.activation, rng,
        )
        return body, head

    def _two_phase_fit(self, teacher, x_tr, x_val, phase1_losses, phase2_losses,
                       input_dim, output_dim, temperature):
        """Run both phases; returns (student, history, phase boundary epoch)."""
        rng = np.random.default_rng(int(self.seed))
        body, phase1_head = self._build_parts(input_dim, output_dim, rng)
        student = Hydra(body, [phase1_head], self._task, temperature)

        batch1, val1 = phase1_losses(student)
        history1 = train_multi_head(
            student.body, student.heads, x_tr, x_val, batch1, val1,
            self._settings(self.phase1_epochs), rng, context="phase 1", phase=1,
            snapshot_fn=lambda: (
                student.body.copy(), [h.copy() for h in student.heads]
            ),
        )

        student = grow_heads(student, teacher.n_members_)
        history2: list[EpochRecord] = []
        if int(self.phase2_epochs) > 0:
            batch2, val2 = phase2_losses(student)
            history2 = train_multi_head(
                student.body, student.heads, x_tr, x_val, batch2, val2,
                self._settings(self.phase2_epochs), rng, context="phase 2", phase=2,
                snapshot_fn=lambda: (
                    student.body.copy(), [h.copy() for h in student.heads]
                ),
                epoch_offset=len(history1),
            )
        return student, history1 + history2, len(history1)

    def save(self, directory, extra_meta: dict | None = None) -> None:
        self._require_fitted()
        meta = {
            "phase1_epochs": int(self.phase1_epochs),
            "phase2_epochs": int(self.phase2_epochs),
            "teacher_digest": getattr(self, "teacher_digest_", None),
        }
        meta.update(extra_meta or {})
        save_hydra(self.model_, directory, meta=meta)

    @classmethod
    def load(cls, directory):
        student, meta = load_hydra(directory)
        if student.task != cls._task:
            raise CheckpointError(
                f"{directory} holds a {student.task} student, expected {cls._task}"
            )
        est = cls(
            temperature=student.temperature,
            phase1_epochs=meta.get("phase1_epochs", 0),
            phase2_epochs=meta.get("phase2_epochs", 0),
        )
        est.model_ = student
        est.n_features_in_ = student.input_dim
        return est


class HydraClassifier(_HydraBase):
    """Multi-headed classification student, one head per teacher member."""

    _task = "classification"

    def __init__(
        self,
        teacher=None,
        body_hidden=(100, 100),
        head_hidden=(100, 100),
        activation="relu",
        temperature=2.0,
        phase1_epochs=200,
        phase2_epochs=200,
        learning_rate=1e-3,
        batch_size=32,
        patience=20,
        optimizer="adam",
        validation_fraction=0.1,
        seed=0,
        cache_dir=None,
    ):
        self.teacher = teacher
        self.body_hidden = body_hidden
        self.head_hidden = head_hidden
        self.activation = activation
        self.temperature = temperature
        self.phase1_epochs = phase1_epochs
        self.phase2_epochs = phase2_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.patience = patience
        self.optimizer = optimizer
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.cache_dir = cache_dir

    def fit(self, X, y=None, validation_data=None):
        teacher = self._require_teacher()
        x = check_matrix(X, "X")
        t = check_temperature(self.temperature)
        x_tr, x_val = self._split(x, y, validation_data)
        cache = self._cache()
        member_tr = classification_targets(teacher, x_tr, t, cache)
        member_val = classification_targets(teacher, x_val, t, cache)
        n_classes = member_tr.shape[2]

        def make_losses(targets_tr, targets_val):
            n_heads = targets_tr.shape[0]

            def head_batch_loss(head_outputs, idx):
                total = 0.0
                upstreams = []
                n = len(idx)
                for outputs, target in zip(head_outputs, targets_tr[:, idx]):
                    ce, d_logits = _tempered_cross_entropy(target, outputs, t)
                    total += float(ce.sum())
                    upstreams.append(t**2 / n_heads * d_logits / n)
                loss = t**2 / n_heads * total / n
                return loss, upstreams

            def val_loss_for(student):
                def val_loss():
                    features = student.body.forward(x_val)
                    total = 0.0
                    for head, target in zip(student.heads, targets_val):
                        ce, _ = _tempered_cross_entropy(
                            target, head.forward(features), t
                        )
                        total += float(ce.sum())
                    return t**2 / n_heads * total / x_val.shape[0]

                return val_loss

            return head_batch_loss, val_loss_for

        def phase1_losses(student):
            batch, val_for = make_losses(
                member_tr.mean(axis=0, keepdims=True),
                member_val.mean(axis=0, keepdims=True),
            )
            return batch, val_for(student)

        def phase2_losses(student):
            batch, val_for = make_losses(member_tr, member_val)
            return batch, val_for(student)

        self.model_, self.history_, self.phase_boundary_ = self._two_phase_fit(
            teacher, x_tr, x_val, phase1_losses, phase2_losses,
            x.shape[1], n_classes, t,
        )
        self.n_features_in_ = x.shape[1]
        self.n_classes_ = n_classes
        self.teacher_digest_ = teacher_digest(teacher)
        return self

    def predict_member_proba(self, X) -> np.ndarray:
        """Per-head probabilities at temperature 1, shape (M, N, C)."""
        self._require_fitted()
        x = check_matrix(X, "X", n_features=self.model_.input_dim)
        return tempered_softmax(self.model_.forward_members(x), 1.0)

    def predict_proba(self, X) -> np.ndarray:
        return self.predict_member_proba(X).mean(axis=0)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


class HydraRegressor(_HydraBase):
    """Multi-headed regression student, one Gaussian head per teacher member."""

    _task = "regression"

    def __init__(
        self,
        teacher=None,
        body_hidden=(50,),
        head_hidden=(10,),
        activation="softplus",
        temperature=1.0,
        phase1_epochs=200,
        phase2_epochs=200,
        learning_rate=1e-3,
        batch_size=32,
        patience=20,
        optimizer="adam",
        validation_fraction=0.1,
        seed=0,
        cache_dir=None,
    ):
        self.teacher = teacher
        self.body_hidden = body_hidden
        self.head_hidden = head_hidden
        self.activation = activation
        self.temperature = temperature
        self.phase1_epochs = phase1_epochs
        self.phase2_epochs = phase2_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.patience = patience
        self.optimizer = optimizer
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.cache_dir = cache_dir

    def fit(self, X, y=None, validation_data=None):
        teacher = self._require_teacher()
        x = check_matrix(X, "X")
        x_tr, x_val = self._split(x, y, validation_data)
        cache = self._cache()
        means_tr, vars_tr = regression_targets(teacher, x_tr, cache)
        means_val, vars_val = regression_targets(teacher, x_val, cache)

        def phase1_losses(student):
            # single head against the whole mixture (moment matching)
            def head_batch_loss(head_outputs, idx):
                loss, d = _kd_regression_batch(
                    head_outputs[0], means_tr[:, idx], vars_tr[:, idx]
                )
                return loss, [d]

            def val_loss():
                features = student.body.forward(x_val)
                out = student.heads[0].forward(features)
                return _kd_regression_batch(out, means_val, vars_val)[0]

            return head_batch_loss, val_loss

        def phase2_losses(student):
            n_heads = student.n_heads

            def head_batch_loss(head_outputs, idx):
                total = 0.0
                upstreams = []
                for m, outputs in enumerate(head_outputs):
                    loss_m, d = _per_head_regression_batch(
                        outputs, means_tr[m, idx], vars_tr[m, idx], n_heads
                    )
                    total += loss_m
                    upstreams.append(d)
                return total, upstreams

            def val_loss():
                features = student.body.forward(x_val)
                total = 0.0
                for m, head in enumerate(student.heads):
                    out = head.forward(features)
                    total += _per_head_regression_batch(
                        out, means_val[m], vars_val[m], n_heads
                    )[0]
                return total

            return head_batch_loss, val_loss

        self.model_, self.history_, self.phase_boundary_ = self._two_phase_fit(
            teacher, x_tr, x_val, phase1_losses, phase2_losses, x.shape[1], 2, 1.0,
        )
        self.n_features_in_ = x.shape[1]
        self.teacher_digest_ = teacher_digest(teacher)
        return self

    def predict_member_gaussians(self, X):
        """Per-head (means, variances), each shaped (M, N)."""
        self._require_fitted()
        x = check_matrix(X, "X", n_features=self.model_.input_dim)
        out = self.model_.forward_members(x)
        return out[:, :, 0], variance_from_raw(out[:, :, 1])

    def predict_dist(self, X):
        """Moment-matched summary of the head mixture."""
        means, variances = self.predict_member_gaussians(X)
        mix_mean = means.mean(axis=0)
        mix_var = (variances + means**2).mean(axis=0) - mix_mean**2
        return mix_mean, mix_var

    def predict(self, X) -> np.ndarray:
        return self.predict_dist(X)[0]
