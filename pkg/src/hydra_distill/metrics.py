"""Scoring and uncertainty quantification.

All entropies and divergences are in nats. Every function here is pure and
stateless; batched helpers exist where the evaluation pipeline needs
per-example values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .network import GaussianPrediction
from .validation import check_distribution, check_positive_variance

# Floor applied inside logs so zero probabilities stay finite.
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class UncertaintyDecomposition:
    """Entropy split of an ensemble prediction, in nats.

    ``total`` is the entropy of the member-averaged distribution,
    ``expected_data`` the average member entropy, and ``model`` their
    difference (the mutual information between label and member identity,
    non-negative up to rounding).
    """

    total: float
    expected_data: float
    model: float


@dataclass
class MetricReport:
    """Summary metrics for one model on one dataset.

    Classification-only fields are None for regression. ``per_example``
    optionally holds the per-row values behind each mean.
    """

    accuracy: float | None
    nll: float
    brier: float | None
    mean_total_uncertainty: float | None
    mean_expected_data_uncertainty: float | None
    mean_model_uncertainty: float | None
    mu_gap: float | None = None
    per_example: dict | None = None


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 treated as 0."""
    arr = check_distribution(p, "p")
    return float(-np.sum(arr * np.log(np.maximum(arr, LOG_FLOOR)), axis=-1))


def categorical_kl(p, q) -> float:
    """KL divergence ``sum p_i log(p_i / q_i)`` in nats.

    Both arguments must be valid distributions; ``q`` entries are floored at
    1e-12 before the log so the result stays finite.
    """
    p_arr = check_distribution(p, "p")
    q_arr = check_distribution(q, "q")
    if p_arr.shape != q_arr.shape:
        raise ValidationError(
            f"distribution shapes differ: {p_arr.shape} vs {q_arr.shape}"
        )
    log_ratio = np.log(np.maximum(p_arr, LOG_FLOOR)) - np.log(
        np.maximum(q_arr, LOG_FLOOR)
    )
    return float(np.sum(np.where(p_arr > 0.0, p_arr * log_ratio, 0.0), axis=-1))


def gaussian_kl(a: GaussianPrediction, b: GaussianPrediction) -> float:
    """Closed-form KL divergence between two univariate Gaussians, in nats."""
    va = check_positive_variance(a.variance, "a.variance")
    vb = check_positive_variance(b.variance, "b.variance")
    return float(
        0.5 * np.log(vb / va) + (va + (a.mean - b.mean) ** 2) / (2.0 * vb) - 0.5
    )


def uncertainty_decomposition(member_probs) -> UncertaintyDecomposition:
    """Decompose an ensemble's predictive entropy for one input.

    ``member_probs`` holds one categorical distribution per member, shape
    (M, C). Total uncertainty is the entropy of the member average, expected
    data uncertainty the average member entropy, and model uncertainty their
    difference.
    """
    probs = check_distribution(member_probs, "member_probs")
    if probs.ndim == 1:
        probs = probs.reshape(1, -1)
    if probs.ndim != 2:
        raise ValidationError(
            f"member_probs must be (M, C), got shape {probs.shape}"
        )
    total, expected, model = decompose_batch(probs[:, np.newaxis, :])
    return UncertaintyDecomposition(
        total=float(total[0]), expected_data=float(expected[0]), model=float(model[0])
    )


def decompose_batch(member_probs: np.ndarray):
    """Vectorized uncertainty decomposition.

    ``member_probs`` has shape (M, N, C); returns three (N,) arrays
    (total, expected data, model uncertainty). Model uncertainty is
    evaluated as the average KL from each member to the member average,
    which equals total minus expected data exactly in real arithmetic and
    is exactly zero (not merely tiny) when all members coincide bitwise,
    as they do for a freshly grown multi-headed student.
    """
    probs = np.asarray(member_probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ValidationError(
            f"member_probs must be (M, N, C), got shape {probs.shape}"
        )
    if np.all(probs == probs[:1]):
        mean_probs = probs[0]
    else:
        mean_probs = probs.mean(axis=0)
    log_member = np.log(np.maximum(probs, LOG_FLOOR))
    log_mean = np.log(np.maximum(mean_probs, LOG_FLOOR))
    expected_data = -np.sum(probs * log_member, axis=-1).mean(axis=0)
    total = -np.sum(mean_probs * log_mean, axis=-1)
    model = np.sum(
        np.where(probs > 0.0, probs * (log_member - log_mean), 0.0), axis=-1
    ).mean(axis=0)
    return total, expected_data, model


def brier_score(predicted, true_class: int) -> float:
    """Mean squared error against the one-hot target, averaged over classes.

    ``(1/C) * sum_c (t_c - p_c)^2`` with ``t`` the one-hot encoding of
    ``true_class``.
    """
    p = check_distribution(predicted, "predicted")
    if p.ndim != 1:
        raise ValidationError("brier_score takes a single probability vector")
    k = int(true_class)
    if not 0 <= k < p.shape[0]:
        raise ValidationError(f"true_class {k} out of range for {p.shape[0]} classes")
    target = np.zeros_like(p)
    target[k] = 1.0
    return float(np.mean((target - p) ** 2))


def accuracy(predictions, targets) -> float:
    """Fraction of argmax matches; ties break toward the lowest class index."""
    probs = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets)
    if probs.ndim != 2 or probs.shape[0] != y.shape[0]:
        raise ValidationError(
            f"predictions {probs.shape} do not pair with targets {y.shape}"
        )
    if y.size == 0:
        return 0.0
    return float(np.mean(np.argmax(probs, axis=1) == y))


def nll(predictions, targets, task: str = "classification",
        return_floored: bool = False):
    """Mean negative log-likelihood.

    Classification: ``predictions`` is an (N, C) matrix of probabilities and
    the score is ``-mean log p(true class)``. Regression: ``predictions`` is
    a ``(means, variances)`` pair of (M, N) arrays treated as an
    equal-weight Gaussian mixture; per-member densities are averaged inside
    the log via log-sum-exp. Probabilities of exactly zero are floored at
    1e-12; pass ``return_floored=True`` to also get the count of floored
    events.
    """
    floored = 0
    if task == "classification":
        probs = np.asarray(predictions, dtype=np.float64)
        y = np.asarray(targets)
        if probs.ndim != 2 or probs.shape[0] != y.shape[0]:
            raise ValidationError(
                f"predictions {probs.shape} do not pair with targets {y.shape}"
            )
        if np.any(y < 0) or np.any(y >= probs.shape[1]):
            raise ValidationError("targets out of class range")
        picked = probs[np.arange(probs.shape[0]), y.astype(np.int64)]
        floored = int(np.sum(picked < LOG_FLOOR))
        value = float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))
    elif task == "regression":
        means, variances = predictions
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        variances = check_positive_variance(
            np.atleast_2d(np.asarray(variances, dtype=np.float64)), "variances"
        )
        y = np.asarray(targets, dtype=np.float64)
        if means.shape != variances.shape or means.shape[1] != y.shape[0]:
            raise ValidationError(
                f"member gaussians {means.shape} do not pair with targets {y.shape}"
            )
        # log[(1/M) sum_m N(y; mu_m, var_m)] via log-sum-exp over members
        log_dens = -0.5 * (
            np.log(2.0 * np.pi * variances) + (y[np.newaxis, :] - means) ** 2 / variances
        )
        peak = log_dens.max(axis=0, keepdims=True)
        log_mix = peak[0] + np.log(
            np.mean(np.exp(log_dens - peak), axis=0)
        )
        value = float(-np.mean(log_mix))
    else:
        raise ValidationError(f"unknown task {task!r}")
    if return_floored:
        return value, floored
    return value


def mu_gap(student_mu, teacher_mu) -> float:
    """Mean absolute difference between two per-example model-uncertainty
    sequences."""
    s = np.asarray(student_mu, dtype=np.float64)
    t = np.asarray(teacher_mu, dtype=np.float64)
    if s.shape != t.shape:
        raise ValidationError(f"length mismatch: {s.shape} vs {t.shape}")
    return float(np.mean(np.abs(s - t)))


def summarize_classification(member_probs, targets) -> MetricReport:
    """Full classification report from per-member probabilities (M, N, C)."""
    probs = np.asarray(member_probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ValidationError(
            f"member_probs must be (M, N, C), got shape {probs.shape}"
        )
    y = np.asarray(targets)
    mean_probs = probs.mean(axis=0)
    total, expected, model = decompose_batch(probs)
    onehot = np.zeros_like(mean_probs)
    onehot[np.arange(mean_probs.shape[0]), y.astype(np.int64)] = 1.0
    per_example = {
        "correct": (np.argmax(mean_probs, axis=1) == y).astype(np.float64),
        "nll": -np.log(
            np.maximum(mean_probs[np.arange(len(y)), y.astype(np.int64)],
                       LOG_FLOOR)
        ),
        "brier": np.mean((onehot - mean_probs) ** 2, axis=1),
        "total_uncertainty": total,
        "expected_data_uncertainty": expected,
        "model_uncertainty": model,
    }
    return MetricReport(
        accuracy=accuracy(mean_probs, y),
        nll=nll(mean_probs, y, task="classification"),
        brier=float(per_example["brier"].mean()),
        mean_total_uncertainty=float(total.mean()),
        mean_expected_data_uncertainty=float(expected.mean()),
        mean_model_uncertainty=float(model.mean()),
        per_example=per_example,
    )


def summarize_regression(member_means, member_variances,
                         targets) -> MetricReport:
    """Regression report: mixture NLL over the member Gaussians."""
    means = np.atleast_2d(np.asarray(member_means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(member_variances, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64)
    log_dens = -0.5 * (
        np.log(2.0 * np.pi * variances)
        + (y[np.newaxis, :] - means) ** 2 / variances
    )
    peak = log_dens.max(axis=0, keepdims=True)
    log_mix = peak[0] + np.log(np.mean(np.exp(log_dens - peak), axis=0))
    per_example = {"nll": -log_mix}
    return MetricReport(
        accuracy=None,
        nll=float(-np.mean(log_mix)),
        brier=None,
        mean_total_uncertainty=None,
        mean_expected_data_uncertainty=None,
        mean_model_uncertainty=None,
        per_example=per_example,
    )
