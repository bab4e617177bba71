"""Distillation loss kernels: values against hand computations, gradients
against central finite differences, and the structural identities that tie
the single-head and per-head objectives together."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from hydra_distill.distill import Hydra
from hydra_distill.exceptions import ConfigError, ValidationError
from hydra_distill.losses import (
    hydra_classification_loss,
    hydra_regression_loss,
    kd_classification_loss,
    kd_regression_loss,
    temper_probabilities,
)
from hydra_distill.metrics import entropy
from hydra_distill.network import build_mlp, tempered_softmax


def _random_distribution(rng, c):
    raw = rng.gamma(1.0, 1.0, size=c) + 1e-9
    return raw / raw.sum()


def _random_hydra(rng, n_heads, in_dim=3, body_out=4, n_out=3):
    body = build_mlp([in_dim, body_out], "softplus", rng,
                     final_activation="softplus")
    heads = [build_mlp([body_out, 4, n_out], "softplus", rng)
             for _ in range(n_heads)]
    return Hydra(body, heads, "classification", 2.0)


def _fd_hydra_param_grads(targets, student, x, temperature, h=1e-5):
    """Finite-difference gradients over every body and head parameter."""

    def loss():
        return hydra_classification_loss(targets, student, x, temperature)[0]

    def grad_of(arr):
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            g[idx] = (up - down) / (2.0 * h)
        return g

    body_fd = [(grad_of(l.weights), grad_of(l.bias)) for l in student.body.layers]
    heads_fd = [
        [(grad_of(l.weights), grad_of(l.bias)) for l in head.layers]
        for head in student.heads
    ]
    return body_fd, heads_fd


class TestTemperProbabilities:
    def test_unit_temperature_is_identity_up_to_normalization(self):
        p = np.array([0.3, 0.45, 0.25])
        assert np.allclose(temper_probabilities(p, 1.0), p, atol=1e-12)

    def test_high_temperature_flattens(self):
        p = np.array([0.9, 0.1])
        heated = temper_probabilities(p, 100.0)
        assert abs(heated[0] - 0.5) < 0.01

    def test_matches_logit_division(self):
        # heating probabilities equals dividing the underlying logits by T
        rng = np.random.default_rng(0)
        logits = rng.normal(size=5)
        t = 2.5
        direct = tempered_softmax(logits, t)
        via_probs = temper_probabilities(tempered_softmax(logits, 1.0), t)
        np.testing.assert_allclose(via_probs, direct, atol=1e-12)


class TestKdClassificationLoss:
    def test_matching_student_leaves_only_entropy(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=4)
        t = 2.0
        teacher = tempered_softmax(logits, t)
        loss, _ = kd_classification_loss(teacher, logits, t)
        assert loss == pytest.approx(t**2 * entropy(teacher), abs=1e-10)

    def test_known_kl_part(self):
        # teacher (0.75, 0.25) against a uniform student at T=1:
        # loss - H(teacher) = KL = 0.13081203594113697
        teacher = np.array([0.75, 0.25])
        loss, _ = kd_classification_loss(teacher, np.zeros(2), 1.0)
        assert loss - entropy(teacher) == pytest.approx(
            0.13081203594113697, abs=1e-12
        )

    def test_temperature_and_logit_scaling_cancel(self):
        rng = np.random.default_rng(2)
        teacher = _random_distribution(rng, 3)
        logits = rng.normal(size=3)
        p1 = tempered_softmax(logits, 2.0)
        p2 = tempered_softmax(logits * 2.0, 4.0)
        np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            c = int(rng.integers(2, 8))
            teacher = _random_distribution(rng, c)
            logits = rng.normal(size=c)
            t = float(rng.uniform(0.5, 5.0))
            _, grad = kd_classification_loss(teacher, logits, t)
            fd = np.zeros(c)
            h = 1e-5
            for i in range(c):
                bumped = logits.copy()
                bumped[i] += h
                up = kd_classification_loss(teacher, bumped, t)[0]
                bumped[i] -= 2 * h
                down = kd_classification_loss(teacher, bumped, t)[0]
                fd[i] = (up - down) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)

    def test_invalid_teacher_rejected(self):
        with pytest.raises(ValidationError):
            kd_classification_loss([0.9, 0.3], np.zeros(2), 1.0)


class TestHydraClassificationLoss:
    def test_single_head_equals_kd_bitwise(self):
        rng = np.random.default_rng(4)
        student = _random_hydra(rng, n_heads=1)
        x = rng.normal(size=3)
        teacher = _random_distribution(rng, 3)
        t = 2.0
        logits = student.forward_members(x)[0]
        kd_loss, _ = kd_classification_loss(teacher, logits, t)
        hydra_loss, _ = hydra_classification_loss(teacher[np.newaxis],
                                                  student, x, t)
        assert hydra_loss == kd_loss  # bitwise, no tolerance

    def test_exact_head_targets_leave_only_entropies(self):
        rng = np.random.default_rng(5)
        student = _random_hydra(rng, n_heads=3)
        x = rng.normal(size=3)
        t = 2.0
        member_logits = student.forward_members(x)
        targets = tempered_softmax(member_logits, t)
        loss, _ = hydra_classification_loss(targets, student, x, t)
        expected = t**2 / 3 * sum(entropy(p) for p in targets)
        assert loss == pytest.approx(expected, abs=1e-10)

    def test_two_member_toy_matches_hand_computation(self):
        # teacher dists (0.8, 0.2) and (0.3, 0.7); student logits fixed via
        # identity-weight heads; frozen value computed by hand via
        # T^2/M * sum_m (KL_m + H_m)
        body = build_mlp([2, 2], "identity", np.random.default_rng(0),
                         final_activation="identity")
        body.layers[0].weights = np.eye(2)
        body.layers[0].bias = np.zeros(2)
        head1 = build_mlp([2, 2], "identity", np.random.default_rng(0))
        head1.layers[0].weights = np.array([[0.4, 0.0], [-0.2, 0.0]])
        head1.layers[0].bias = np.zeros(2)
        head2 = build_mlp([2, 2], "identity", np.random.default_rng(0))
        head2.layers[0].weights = np.array([[-0.1, 0.0], [0.5, 0.0]])
        head2.layers[0].bias = np.zeros(2)
        student = Hydra(body, [head1, head2], "classification", 2.0)
        targets = np.array([[0.8, 0.2], [0.3, 0.7]])
        # heads see x=(1, 0), so logits are (0.4, -0.2) and (-0.1, 0.5)
        loss, _ = hydra_classification_loss(targets, student,
                                            np.array([1.0, 0.0]), 2.0)
        assert loss == pytest.approx(2.5174209778741083, abs=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        student = _random_hydra(rng, n_heads=4)
        x = rng.normal(size=3)
        targets = np.stack([_random_distribution(rng, 3) for _ in range(4)])
        t = 2.0
        base, _ = hydra_classification_loss(targets, student, x, t)
        perm = rng.permutation(4)
        permuted = Hydra(student.body, [student.heads[i] for i in perm],
                         "classification", t)
        swapped, _ = hydra_classification_loss(targets[perm], permuted, x, t)
        assert swapped == pytest.approx(base, abs=1e-12)

    def test_parameter_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            m = int(rng.integers(1, 4))
            student = _random_hydra(rng, n_heads=m)
            x = rng.normal(size=3)
            targets = np.stack([_random_distribution(rng, 3) for _ in range(m)])
            t = float(rng.uniform(0.5, 4.0))
            _, grads = hydra_classification_loss(targets, student, x, t)
            body_fd, heads_fd = _fd_hydra_param_grads(targets, student, x, t)
            for (gw, gb), (fw, fb) in zip(grads.body, body_fd):
                np.testing.assert_allclose(gw, fw, rtol=1e-4, atol=1e-8)
                np.testing.assert_allclose(gb, fb, rtol=1e-4, atol=1e-8)
            for head_grads, head_fd in zip(grads.heads, heads_fd):
                for (gw, gb), (fw, fb) in zip(head_grads, head_fd):
                    np.testing.assert_allclose(gw, fw, rtol=1e-4, atol=1e-8)
                    np.testing.assert_allclose(gb, fb, rtol=1e-4, atol=1e-8)

    def test_head_count_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        student = _random_hydra(rng, n_heads=2)
        targets = np.stack([_random_distribution(rng, 3) for _ in range(3)])
        with pytest.raises(ConfigError):
            hydra_classification_loss(targets, student, np.zeros(3), 2.0)


class TestKdRegressionLoss:
    def test_single_member_self_cross_entropy(self):
        # student equal to its only target: loss = 0.5 log(2 pi s2) + 0.5
        loss, _ = kd_regression_loss([0.7], [0.25], 0.7, 0.25)
        assert loss == pytest.approx(0.7257913526447274, abs=1e-12)

    def test_moment_matched_minimizer_has_zero_gradient(self):
        loss, (d_mean, d_var) = kd_regression_loss(
            [-1.0, 1.0], [0.25, 0.25], 0.0, 1.25
        )
        assert abs(d_mean) < 1e-8
        assert abs(d_var) < 1e-8
        assert loss == pytest.approx(1.5305103088617775, abs=1e-12)

    def test_loss_diverges_with_student_variance(self):
        small, _ = kd_regression_loss([0.0], [1.0], 0.0, 1.0)
        huge, _ = kd_regression_loss([0.0], [1.0], 0.0, 1e9)
        assert huge > small + 5.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        h = 1e-5
        for _ in range(20):
            m = int(rng.integers(1, 6))
            means = rng.normal(size=m)
            variances = rng.uniform(0.1, 3.0, size=m)
            mu = float(rng.normal())
            var = float(rng.uniform(0.2, 3.0))
            _, (d_mean, d_var) = kd_regression_loss(means, variances, mu, var)
            fd_mean = (
                kd_regression_loss(means, variances, mu + h, var)[0]
                - kd_regression_loss(means, variances, mu - h, var)[0]
            ) / (2 * h)
            fd_var = (
                kd_regression_loss(means, variances, mu, var + h)[0]
                - kd_regression_loss(means, variances, mu, var - h)[0]
            ) / (2 * h)
            assert d_mean == pytest.approx(fd_mean, rel=1e-4, abs=1e-8)
            assert d_var == pytest.approx(fd_var, rel=1e-4, abs=1e-8)

    def test_bounded_below_by_average_teacher_entropy(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            m = int(rng.integers(1, 6))
            means = rng.normal(size=m)
            variances = rng.uniform(0.1, 3.0, size=m)
            bound = np.mean(0.5 * np.log(2 * math.pi * math.e * variances))
            loss, _ = kd_regression_loss(
                means, variances, float(rng.normal()),
                float(rng.uniform(0.2, 3.0))
            )
            assert loss >= bound - 1e-12

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValidationError):
            kd_regression_loss([0.0], [1.0], 0.0, -1.0)
        with pytest.raises(ValidationError):
            kd_regression_loss([0.0], [-1.0], 0.0, 1.0)


class TestHydraRegressionLoss:
    def test_heads_equal_members_leave_average_entropy(self):
        rng = np.random.default_rng(11)
        means = rng.normal(size=4)
        variances = rng.uniform(0.2, 2.0, size=4)
        loss, (d_means, d_vars) = hydra_regression_loss(
            means, variances, means, variances
        )
        expected = np.mean(0.5 * np.log(2 * math.pi * math.e * variances))
        assert loss == pytest.approx(expected, abs=1e-12)
        # per-head KL part is exactly zero, so only variance terms remain
        np.testing.assert_allclose(d_means, 0.0, atol=1e-12)

    def test_single_pair_known_kl(self):
        # N(0,1) target under N(1,1) head: KL part 0.5 nats
        loss, _ = hydra_regression_loss([0.0], [1.0], [1.0], [1.0])
        member_entropy = 0.5 * math.log(2 * math.pi * math.e)
        assert loss - member_entropy == pytest.approx(0.5, abs=1e-12)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            m = int(rng.integers(1, 4))
            means = rng.uniform(-2, 2, size=m)
            variances = rng.uniform(0.2, 2.0, size=m)
            h_means = rng.uniform(-2, 2, size=m)
            h_vars = rng.uniform(0.2, 2.0, size=m)
            loss, _ = hydra_regression_loss(means, variances, h_means, h_vars)
            total = 0.0
            for k in range(m):
                sd = math.sqrt(variances[k])

                def integrand(y, k=k):
                    log_n = -0.5 * math.log(2 * math.pi * variances[k]) \
                        - (y - means[k]) ** 2 / (2 * variances[k])
                    log_h = -0.5 * math.log(2 * math.pi * h_vars[k]) \
                        - (y - h_means[k]) ** 2 / (2 * h_vars[k])
                    return -math.exp(log_n) * log_h

                val, _ = quad(integrand, means[k] - 12 * sd, means[k] + 12 * sd,
                              limit=200)
                total += val
            assert loss == pytest.approx(total / m, abs=1e-6)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(13)
        means = rng.normal(size=5)
        variances = rng.uniform(0.2, 2.0, size=5)
        h_means = rng.normal(size=5)
        h_vars = rng.uniform(0.2, 2.0, size=5)
        base, _ = hydra_regression_loss(means, variances, h_means, h_vars)
        perm = rng.permutation(5)
        swapped, _ = hydra_regression_loss(
            means[perm], variances[perm], h_means[perm], h_vars[perm]
        )
        assert swapped == pytest.approx(base, abs=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(14)
        h = 1e-5
        for _ in range(10):
            m = int(rng.integers(1, 5))
            means = rng.normal(size=m)
            variances = rng.uniform(0.2, 2.0, size=m)
            h_means = rng.normal(size=m)
            h_vars = rng.uniform(0.2, 2.0, size=m)
            _, (d_means, d_vars) = hydra_regression_loss(
                means, variances, h_means, h_vars
            )
            for k in range(m):
                bump = h_means.copy()
                bump[k] += h
                up = hydra_regression_loss(means, variances, bump, h_vars)[0]
                bump[k] -= 2 * h
                down = hydra_regression_loss(means, variances, bump, h_vars)[0]
                assert d_means[k] == pytest.approx((up - down) / (2 * h),
                                                   rel=1e-4, abs=1e-8)
                bump_v = h_vars.copy()
                bump_v[k] += h
                up = hydra_regression_loss(means, variances, h_means, bump_v)[0]
                bump_v[k] -= 2 * h
                down = hydra_regression_loss(means, variances, h_means, bump_v)[0]
                assert d_vars[k] == pytest.approx((up - down) / (2 * h),
                                                  rel=1e-4, abs=1e-8)

    def test_count_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            hydra_regression_loss([0.0, 1.0], [1.0, 1.0], [0.0], [1.0])
