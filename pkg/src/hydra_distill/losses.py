"""Distillation loss kernels with analytic gradients.

Classification targets are soft probability vectors produced by a teacher
ensemble; both teacher and student distributions are heated with the same
temperature during training, and the loss is scaled by the squared
temperature so gradient magnitudes stay comparable across temperatures.
Regression targets are per-member Gaussians; losses are the average
cross-entropy of each target Gaussian under the student's Gaussian, which
differs from the corresponding KL only by the targets' entropies.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, ValidationError
from .network import log_tempered_softmax, tempered_softmax
from .validation import (
    check_distribution,
    check_positive_variance,
    check_temperature,
    check_vector,
)


def temper_probabilities(probs, temperature) -> np.ndarray:
    """Heat a categorical distribution: raise to 1/T and renormalize.

    Equivalent to dividing the underlying logits by T. Works on a single
    vector or a batch along the last axis.
    """
    t = check_temperature(temperature)
    p = check_distribution(probs, "probs")
    heated = np.maximum(p, 0.0) ** (1.0 / t)
    return heated / heated.sum(axis=-1, keepdims=True)


def _tempered_cross_entropy(target_probs, logits, temperature):
    """Cross-entropy of ``target_probs`` against the tempered softmax of
    ``logits``, with its gradient in the logits.

    Shared by the single-head and per-head classification losses so that the
    one-head case of the latter reproduces the former bitwise.
    """
    log_q = log_tempered_softmax(logits, temperature)
    ce = -np.sum(target_probs * log_q, axis=-1)
    d_logits = (tempered_softmax(logits, temperature) - target_probs) / temperature
    return ce, d_logits


def kd_classification_loss(teacher_mean, student_logits, temperature):
    """Single-student distillation loss against the averaged teacher.

    Returns ``T^2 * cross_entropy(teacher_mean, softmax(student_logits / T))``
    and its gradient in the student logits. This equals ``T^2`` times the KL
    from the teacher average to the student, up to the constant teacher
    entropy that gradient descent never sees.
    """
    t = check_temperature(temperature)
    p = check_distribution(teacher_mean, "teacher_mean")
    z = check_vector(np.asarray(student_logits, dtype=np.float64), "student_logits",
                     length=p.shape[-1])
    ce, d_logits = _tempered_cross_entropy(p, z, t)
    return float(t**2 * ce), t**2 * d_logits


def hydra_classification_loss(teacher_member_probs, hydra, x, temperature):
    """Average per-head distillation loss for a multi-headed student.

    ``teacher_member_probs`` holds one (already heated) distribution per
    teacher member, shape (M, C); head ``m`` is matched to member ``m`` by
    index. Returns ``(T^2 / M) * sum_m cross_entropy(p_m, softmax(z_m / T))``
    together with gradients for the body and every head (a
    :class:`HydraGradients`). With a single head this is bitwise equal to
    :func:`kd_classification_loss` on the same logits.
    """
    from .distill import HydraGradients  # local import to avoid a cycle

    t = check_temperature(temperature)
    targets = check_distribution(teacher_member_probs, "teacher_member_probs")
    targets = np.atleast_2d(targets)
    if targets.shape[0] != hydra.n_heads:
        raise ConfigError(
            f"{targets.shape[0]} teacher members but student has "
            f"{hydra.n_heads} heads"
        )
    x_arr = np.asarray(x, dtype=np.float64).reshape(1, -1)
    body_out, body_pre, body_post = hydra.body.forward_trace(x_arr)

    total_ce = 0.0
    head_grads = []
    body_upstream = np.zeros_like(body_out)
    for head, target in zip(hydra.heads, targets):
        logits, pre, post = head.forward_trace(body_out)
        ce, d_logits = _tempered_cross_entropy(target, logits[0], t)
        total_ce += float(ce)
        upstream = (t**2 / targets.shape[0]) * d_logits.reshape(1, -1)
        grads, input_grad = head.backward_from_trace(pre, post, upstream)
        head_grads.append(grads)
        body_upstream += input_grad
    body_grads, _ = hydra.body.backward_from_trace(body_pre, body_post, body_upstream)
    loss = float(t**2 / targets.shape[0] * total_ce)
    return loss, HydraGradients(body=body_grads, heads=head_grads)


def _gaussian_cross_entropy_terms(member_means, member_variances, mean, variance):
    """Per-member cross-entropy of N(member) under N(mean, variance)."""
    return (member_variances + (member_means - mean) ** 2) / (2.0 * variance) + \
        0.5 * np.log(2.0 * np.pi * variance)


def kd_regression_loss(member_means, member_variances, student_mean,
                       student_variance):
    """Moment-matching regression distillation loss.

    Averages, over teacher members, the cross-entropy of member Gaussian
    ``N(mu_m, var_m)`` under the student Gaussian. The unique minimizer is
    the moment-matched Gaussian of the teacher mixture. Returns the loss and
    its gradient ``(d/d mean, d/d variance)``.
    """
    mu = check_vector(member_means, "member_means")
    var = check_positive_variance(member_variances, "member_variances")
    var = check_vector(var, "member_variances", length=mu.shape[0])
    if mu.size == 0:
        raise ValidationError("need at least one teacher member")
    mean = float(student_mean)
    variance = float(check_positive_variance(student_variance, "student_variance"))
    loss = float(np.mean(_gaussian_cross_entropy_terms(mu, var, mean, variance)))
    d_mean = float(np.mean((mean - mu) / variance))
    d_var = float(
        np.mean(-(var + (mu - mean) ** 2) / (2.0 * variance**2) + 0.5 / variance)
    )
    return loss, (d_mean, d_var)


def hydra_regression_loss(member_means, member_variances, head_means,
                          head_variances):
    """Per-head regression distillation loss.

    Head ``m`` matches teacher member ``m``; the loss is the average over
    heads of the cross-entropy of ``N(mu_m, var_m)`` under ``N(head_mu_m,
    head_var_m)``. Returns the loss and gradients ``(d/d head_means,
    d/d head_variances)`` as (M,) arrays.
    """
    mu = check_vector(member_means, "member_means")
    var = check_vector(
        check_positive_variance(member_variances, "member_variances"),
        "member_variances",
        length=mu.shape[0],
    )
    h_mu = check_vector(head_means, "head_means")
    h_var = check_vector(
        check_positive_variance(head_variances, "head_variances"),
        "head_variances",
        length=h_mu.shape[0],
    )
    if h_mu.shape[0] != mu.shape[0]:
        raise ConfigError(
            f"{mu.shape[0]} teacher members but {h_mu.shape[0]} head outputs"
        )
    m = mu.shape[0]
    loss = float(np.mean(_gaussian_cross_entropy_terms(mu, var, h_mu, h_var)))
    d_means = (h_mu - mu) / h_var / m
    d_vars = (-(var + (mu - h_mu) ** 2) / (2.0 * h_var**2) + 0.5 / h_var) / m
    return loss, (d_means, d_vars)
