"""Deep ensembles: M independently trained networks and their predictions.

Member diversity comes from the initialization seed and the data shuffling
order only; every member sees the full training set and keeps its
best-validation snapshot. Estimators follow the fit/predict convention and
serialize to a directory of one checkpoint per member plus a manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._training import TrainSettings, train_network
from .exceptions import (
    CheckpointError,
    ConfigError,
    ValidationError,
)
from .network import (
    build_mlp,
    chain_logvar_grad,
    load_mlp,
    log_tempered_softmax,
    save_mlp,
    tempered_softmax,
    variance_from_raw,
)
from .validation import check_class_labels, check_matrix

ENSEMBLE_FORMAT = "ensemble"
ENSEMBLE_VERSION = 1


@dataclass(frozen=True)
class CategoricalEnsemblePrediction:
    """Per-member categorical predictions plus their arithmetic average."""

    member_probabilities: np.ndarray  # (M, N, C)
    mean_probabilities: np.ndarray  # (N, C)


@dataclass(frozen=True)
class GaussianEnsemblePrediction:
    """Per-member Gaussians plus the moment-matched mixture summary.

    The mixture variance follows the law of total variance:
    ``mean(var_m + mu_m^2) - mixture_mean^2``.
    """

    member_means: np.ndarray  # (M, N)
    member_variances: np.ndarray  # (M, N)
    mixture_mean: np.ndarray  # (N,)
    mixture_variance: np.ndarray  # (N,)


def _softmax_nll_batch(outputs: np.ndarray, y: np.ndarray):
    """Cross-entropy on standard softmax, with gradient in the logits."""
    log_q = log_tempered_softmax(outputs, 1.0)
    rows = np.arange(outputs.shape[0])
    loss = float(-np.mean(log_q[rows, y]))
    d = np.exp(log_q)
    d[rows, y] -= 1.0
    return loss, d / outputs.shape[0]


def _gaussian_nll_batch(outputs: np.ndarray, y: np.ndarray):
    """Heteroscedastic Gaussian NLL on (mean, log-variance) outputs."""
    mu = outputs[:, 0]
    raw = outputs[:, 1]
    var = variance_from_raw(raw)
    sq = (y - mu) ** 2 / var
    loss = float(np.mean(0.5 * (np.log(2.0 * np.pi * var) + sq)))
    n = outputs.shape[0]
    d = np.zeros_like(outputs)
    d[:, 0] = (mu - y) / var / n
    d[:, 1] = chain_logvar_grad(var, (0.5 / var) * (1.0 - sq) / n)
    return loss, d


class _EnsembleBase(BaseEstimator):
    """Shared training and persistence for both ensemble estimators."""

    _task = None  # set by subclasses

    def __init__(
        self,
        hidden_layers=(100, 100),
        activation="relu",
        n_members=10,
        learning_rate=1e-3,
        batch_size=32,
        max_epochs=200,
        patience=20,
        optimizer="adam",
        validation_fraction=0.1,
        seed=0,
        seeds=None,
    ):
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.n_members = n_members
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.seeds = seeds

    # -- configuration ---------------------------------------------------

    def member_seeds(self) -> list[int]:
        if self.seeds is not None:
            seeds = [int(s) for s in self.seeds]
        else:
            seeds = [int(self.seed) + i for i in range(int(self.n_members))]
        if len(seeds) != int(self.n_members):
            raise ConfigError(
                f"{len(seeds)} seeds given for {self.n_members} members"
            )
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"member seeds must be distinct, got {seeds}")
        return seeds

    def _settings(self) -> TrainSettings:
        return TrainSettings(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=int(self.batch_size),
            max_epochs=int(self.max_epochs),
            patience=int(self.patience),
        )

    def _split_validation(self, x, y):
        from .datasets import split_indices

        frac = float(self.validation_fraction)
        if not 0.0 < frac < 1.0:
            raise ConfigError(
                f"validation_fraction must be in (0, 1), got {frac}"
            )
        labels = y if self._task == "classification" else None
        idx_train, idx_val = split_indices(
            x.shape[0], [1.0 - frac, frac], int(self.seed),
            stratify_labels=labels,
        )
        if idx_val.size == 0 or idx_train.size == 0:
            raise ConfigError("validation split left train or validation empty")
        return x[idx_train], y[idx_train], x[idx_val], y[idx_val]

    # -- fitting ----------------------------------------------------------

    def fit(self, X, y, validation_data=None):
        """Train all members independently on the full training set."""
        x = check_matrix(X, "X")
        y = self._check_targets(y, x.shape[0])
        if validation_data is not None:
            x_val = check_matrix(validation_data[0], "validation X", x.shape[1])
            y_val = self._check_targets(validation_data[1], x_val.shape[0])
            x_tr, y_tr = x, y
        else:
            x_tr, y_tr, x_val, y_val = self._split_validation(x, y)
        self._set_output_dims(y)
        dims = [x.shape[1], *map(int, self.hidden_layers), self._output_dim()]
        settings = self._settings()
        members = []
        for seed in self.member_seeds():
            rng = np.random.default_rng(seed)
            model = build_mlp(dims, self.activation, rng)
            best, _ = train_network(
                model,
                x_tr,
                x_val,
                self._batch_loss(x_tr, y_tr),
                self._val_loss(x_val, y_val),
                settings,
                rng,
                context=f"member seed {seed}",
            )
            members.append(best)
        self.members_ = members
        self.n_features_in_ = x.shape[1]
        return self

    # -- persistence -------------------------------------------------------

    def save(self, directory, extra_meta: dict | None = None) -> None:
        """Write a manifest plus one checkpoint file per member."""
        self._require_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": ENSEMBLE_FORMAT,
            "version": ENSEMBLE_VERSION,
            "task": self._task,
            "n_members": len(self.members_),
            "seeds": self.member_seeds(),
            "architecture": {
                "input_dim": int(self.n_features_in_),
                "hidden_layers": [int(h) for h in self.hidden_layers],
                "output_dim": self._output_dim(),
                "activation": self.activation,
            },
            "meta": dict(extra_meta or {}),
        }
        with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")
        for i, member in enumerate(self.members_):
            save_mlp(member, directory / f"member_{i:03d}.json",
                     meta={"member": i, "seed": manifest["seeds"][i]})

    @classmethod
    def load(cls, directory):
        """Load a saved ensemble; predictions round-trip bitwise."""
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise CheckpointError(f"no manifest.json in {directory}")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            try:
                manifest = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CheckpointError(f"corrupt manifest: {exc}") from exc
        if manifest.get("format") != ENSEMBLE_FORMAT:
            raise CheckpointError(
                f"not an ensemble directory (format={manifest.get('format')!r})"
            )
        if manifest.get("version") != ENSEMBLE_VERSION:
            raise CheckpointError(
                f"unsupported ensemble version {manifest.get('version')!r}"
            )
        if manifest.get("task") != cls._task:
            raise CheckpointError(
                f"task mismatch: directory holds {manifest.get('task')!r}, "
                f"expected {cls._task!r}"
            )
        arch = manifest["architecture"]
        est = cls(
            hidden_layers=tuple(arch["hidden_layers"]),
            activation=arch["activation"],
            n_members=manifest["n_members"],
            seeds=manifest["seeds"],
        )
        members = []
        for i in range(int(manifest["n_members"])):
            path = directory / f"member_{i:03d}.json"
            if not path.exists():
                raise CheckpointError(
                    f"manifest declares {manifest['n_members']} members but "
                    f"member {i} is missing"
                )
            try:
                model, _ = load_mlp(path)
            except CheckpointError as exc:
                raise CheckpointError(f"member {i}: {exc}") from exc
            members.append(model)
        est.members_ = members
        est.n_features_in_ = int(arch["input_dim"])
        est._restore_output_dims(arch["output_dim"])
        return est

    # -- small shared pieces ------------------------------------------------

    def _require_fitted(self):
        if not hasattr(self, "members_"):
            raise ValidationError("estimator is not fitted")

    @property
    def n_members_(self) -> int:
        self._require_fitted()
        return len(self.members_)

    def _member_outputs(self, X) -> np.ndarray:
        self._require_fitted()
        x = check_matrix(X, "X", n_features=self.n_features_in_)
        return np.stack([m.forward(x) for m in self.members_])


class DeepEnsembleClassifier(_EnsembleBase):
    """Seed-diverse ensemble of softmax classifiers trained on cross-entropy."""

    _task = "classification"

    def _check_targets(self, y, n_rows):
        labels = check_class_labels(y, "y")
        if labels.shape[0] != n_rows:
            raise ValidationError("X and y row counts differ")
        return labels

    def _set_output_dims(self, y):
        self.n_classes_ = int(y.max()) + 1 if y.size else 0
        if self.n_classes_ < 2:
            raise ValidationError("need at least two classes to train")

    def _restore_output_dims(self, output_dim):
        self.n_classes_ = int(output_dim)

    def _output_dim(self) -> int:
        return self.n_classes_

    def _batch_loss(self, x_tr, y_tr):
        def batch_loss(outputs, idx):
            return _softmax_nll_batch(outputs, y_tr[idx])

        return batch_loss

    def _val_loss(self, x_val, y_val):
        def val_loss(model):
            return _softmax_nll_batch(model.forward(x_val), y_val)[0]

        return val_loss

    def predict_member_proba(self, X) -> np.ndarray:
        """Per-member probabilities at temperature 1, shape (M, N, C)."""
        return tempered_softmax(self._member_outputs(X), 1.0)

    def predict_proba(self, X) -> np.ndarray:
        """Member-averaged probabilities, shape (N, C)."""
        return self.predict_member_proba(X).mean(axis=0)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def predict_full(self, X) -> CategoricalEnsemblePrediction:
        member = self.predict_member_proba(X)
        return CategoricalEnsemblePrediction(member, member.mean(axis=0))


class DeepEnsembleRegressor(_EnsembleBase):
    """Seed-diverse ensemble of heteroscedastic Gaussian regressors."""

    _task = "regression"

    def _check_targets(self, y, n_rows):
        targets = np.asarray(y, dtype=np.float64)
        if targets.ndim != 1 or targets.shape[0] != n_rows:
            raise ValidationError("y must be 1-D and pair with X rows")
        if targets.size and not np.all(np.isfinite(targets)):
            raise ValidationError("y contains non-finite values")
        return targets

    def _set_output_dims(self, y):
        pass

    def _restore_output_dims(self, output_dim):
        pass

    def _output_dim(self) -> int:
        return 2

    def _batch_loss(self, x_tr, y_tr):
        def batch_loss(outputs, idx):
            return _gaussian_nll_batch(outputs, y_tr[idx])

        return batch_loss

    def _val_loss(self, x_val, y_val):
        def val_loss(model):
            return _gaussian_nll_batch(model.forward(x_val), y_val)[0]

        return val_loss

    def predict_member_gaussians(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Per-member (means, variances), each shaped (M, N)."""
        outputs = self._member_outputs(X)
        return outputs[:, :, 0], variance_from_raw(outputs[:, :, 1])

    def predict_dist(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Moment-matched mixture (mean, variance) per input."""
        means, variances = self.predict_member_gaussians(X)
        mix_mean = means.mean(axis=0)
        mix_var = (variances + means**2).mean(axis=0) - mix_mean**2
        return mix_mean, mix_var

    def predict(self, X) -> np.ndarray:
        return self.predict_dist(X)[0]

    def predict_full(self, X) -> GaussianEnsemblePrediction:
        means, variances = self.predict_member_gaussians(X)
        mix_mean = means.mean(axis=0)
        mix_var = (variances + means**2).mean(axis=0) - mix_mean**2
        return GaussianEnsemblePrediction(means, variances, mix_mean, mix_var)
