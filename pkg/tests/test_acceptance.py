"""Acceptance suite: one test per criterion, run at the stated tolerances.

Each test prints a single pass line once its assertions hold (visible with
``pytest -s``, or in captured output on failure). The spiral models come
from the session fixtures in conftest.py; everything else is built here.
"""

import filecmp
import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from hydra_distill import (
    Dataset,
    DeepEnsembleRegressor,
    HydraRegressor,
    KDRegressor,
    ShiftSpec,
    apply_shift,
    count_params,
    grow_heads,
    standardize,
    train_val_test_split,
)
from hydra_distill.cli import main as cli_main
from hydra_distill.distill import Hydra
from hydra_distill.losses import (
    hydra_classification_loss,
    hydra_regression_loss,
    kd_classification_loss,
    kd_regression_loss,
)
from hydra_distill.metrics import (
    accuracy,
    categorical_kl,
    decompose_batch,
    entropy,
    gaussian_kl,
    mu_gap,
    nll,
    uncertainty_decomposition,
)
from hydra_distill.network import (
    GaussianPrediction,
    Optimizer,
    build_mlp,
    tempered_softmax,
    variance_from_raw,
)


def _passed(number: int, message: str) -> None:
    print(f"[criterion {number:2d}] PASS  {message}")


def _random_distribution(rng, c):
    raw = rng.gamma(1.0, 1.0, size=c) + 1e-9
    return raw / raw.sum()


def test_criterion_01_parameter_accounting():
    rng = np.random.default_rng(0)
    member = build_mlp([784, 200, 200, 10], "relu", rng)
    assert count_params(member) == 199_210

    ensemble_total = sum(count_params(member) for _ in range(50))
    assert ensemble_total == 9_960_500

    body = build_mlp([784, 200, 200], "relu", rng, final_activation="relu")
    head = build_mlp([200, 100, 100, 10], "relu", rng)
    student = grow_heads(Hydra(body, [head], "classification"), 50)
    assert count_params(student) == 1_757_700
    _passed(1, "parameter accounting: 199,210 / 9,960,500 / 1,757,700 exact")


class TestCriterion02GradientChecks:
    """Every loss against central finite differences, 100 trials each,
    dims <= 20, relative error < 1e-4."""

    TRIALS = 100

    def test_kd_classification(self):
        rng = np.random.default_rng(10)
        h = 1e-5
        for _ in range(self.TRIALS):
            c = int(rng.integers(2, 21))
            teacher = _random_distribution(rng, c)
            logits = rng.normal(size=c)
            t = float(rng.uniform(0.5, 5.0))
            _, grad = kd_classification_loss(teacher, logits, t)
            fd = np.zeros(c)
            for i in range(c):
                bumped = logits.copy()
                bumped[i] += h
                up = kd_classification_loss(teacher, bumped, t)[0]
                bumped[i] -= 2 * h
                down = kd_classification_loss(teacher, bumped, t)[0]
                fd[i] = (up - down) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)
        _passed(2, f"kd classification gradients, {self.TRIALS} trials")

    def test_hydra_classification(self):
        rng = np.random.default_rng(11)
        h = 1e-5
        for _ in range(self.TRIALS):
            m = int(rng.integers(1, 5))
            c = int(rng.integers(2, 6))
            body = build_mlp([2, 3], "softplus", rng,
                             final_activation="softplus")
            heads = [build_mlp([3, 4, c], "softplus", rng) for _ in range(m)]
            student = Hydra(body, heads, "classification", 2.0)
            targets = np.stack([_random_distribution(rng, c) for _ in range(m)])
            x = rng.normal(size=2)
            t = float(rng.uniform(0.5, 4.0))
            _, grads = hydra_classification_loss(targets, student, x, t)

            def loss():
                return hydra_classification_loss(targets, student, x, t)[0]

            def check(arr, analytic):
                fd = np.zeros_like(arr)
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    old = arr[idx]
                    arr[idx] = old + h
                    up = loss()
                    arr[idx] = old - h
                    down = loss()
                    arr[idx] = old
                    fd[idx] = (up - down) / (2 * h)
                np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-8)

            for layer, (gw, gb) in zip(student.body.layers, grads.body):
                check(layer.weights, gw)
                check(layer.bias, gb)
            for head, head_grads in zip(student.heads, grads.heads):
                for layer, (gw, gb) in zip(head.layers, head_grads):
                    check(layer.weights, gw)
                    check(layer.bias, gb)
        _passed(2, f"hydra classification gradients, {self.TRIALS} trials")

    def test_kd_regression(self):
        rng = np.random.default_rng(12)
        h = 1e-5
        for _ in range(self.TRIALS):
            m = int(rng.integers(1, 21))
            means = rng.normal(size=m)
            variances = rng.uniform(0.1, 3.0, size=m)
            mu = float(rng.normal())
            var = float(rng.uniform(0.2, 3.0))
            _, (d_mean, d_var) = kd_regression_loss(means, variances, mu, var)
            fd_mean = (kd_regression_loss(means, variances, mu + h, var)[0]
                       - kd_regression_loss(means, variances, mu - h, var)[0]
                       ) / (2 * h)
            fd_var = (kd_regression_loss(means, variances, mu, var + h)[0]
                      - kd_regression_loss(means, variances, mu, var - h)[0]
                      ) / (2 * h)
            np.testing.assert_allclose([d_mean, d_var], [fd_mean, fd_var],
                                       rtol=1e-4, atol=1e-8)
        _passed(2, f"kd regression gradients, {self.TRIALS} trials")

    def test_hydra_regression(self):
        rng = np.random.default_rng(13)
        h = 1e-5
        for _ in range(self.TRIALS):
            m = int(rng.integers(1, 21))
            means = rng.normal(size=m)
            variances = rng.uniform(0.1, 3.0, size=m)
            h_means = rng.normal(size=m)
            h_vars = rng.uniform(0.2, 3.0, size=m)
            _, (d_means, d_vars) = hydra_regression_loss(
                means, variances, h_means, h_vars
            )
            fd_means = np.zeros(m)
            fd_vars = np.zeros(m)
            for k in range(m):
                bump = h_means.copy()
                bump[k] += h
                up = hydra_regression_loss(means, variances, bump, h_vars)[0]
                bump[k] -= 2 * h
                down = hydra_regression_loss(means, variances, bump, h_vars)[0]
                fd_means[k] = (up - down) / (2 * h)
                bump_v = h_vars.copy()
                bump_v[k] += h
                up = hydra_regression_loss(means, variances, h_means,
                                           bump_v)[0]
                bump_v[k] -= 2 * h
                down = hydra_regression_loss(means, variances, h_means,
                                             bump_v)[0]
                fd_vars[k] = (up - down) / (2 * h)
            np.testing.assert_allclose(d_means, fd_means, rtol=1e-4, atol=1e-8)
            np.testing.assert_allclose(d_vars, fd_vars, rtol=1e-4, atol=1e-8)
        _passed(2, f"hydra regression gradients, {self.TRIALS} trials")


def test_criterion_03_kl_oracles():
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(1000):
        a = GaussianPrediction(rng.uniform(-3, 3), rng.uniform(0.1, 4.0))
        b = GaussianPrediction(rng.uniform(-3, 3), rng.uniform(0.1, 4.0))
        sd = math.sqrt(a.variance)

        def integrand(y):
            la = -0.5 * math.log(2 * math.pi * a.variance) \
                - (y - a.mean) ** 2 / (2 * a.variance)
            lb = -0.5 * math.log(2 * math.pi * b.variance) \
                - (y - b.mean) ** 2 / (2 * b.variance)
            return math.exp(la) * (la - lb)

        numeric, _ = quad(integrand, a.mean - 12 * sd, a.mean + 12 * sd,
                          limit=200)
        worst = max(worst, abs(gaussian_kl(a, b) - numeric))
    assert worst < 1e-6

    for _ in range(500):
        c = int(rng.integers(2, 9))
        p = _random_distribution(rng, c)
        assert abs(categorical_kl(p, p)) < 1e-10
        uniform = np.full(c, 1.0 / c)
        identity_gap = categorical_kl(p, uniform) - (math.log(c) - entropy(p))
        assert abs(identity_gap) < 1e-10
    _passed(3, f"gaussian_kl vs quadrature (worst gap {worst:.2e}), "
               "categorical identities < 1e-10")


def test_criterion_04_decomposition_invariants():
    rng = np.random.default_rng(30)
    checked = 0
    while checked < 10_000:
        m = int(rng.integers(1, 9))
        c = int(rng.integers(2, 7))
        batch = min(500, 10_000 - checked)
        raw = rng.gamma(1.0, 1.0, size=(m, batch, c)) + 1e-9
        probs = raw / raw.sum(axis=-1, keepdims=True)
        total, expected, model = decompose_batch(probs)
        np.testing.assert_allclose(model, total - expected, atol=1e-9, rtol=0)
        assert np.all(model >= -1e-9)
        checked += batch

    for _ in range(50):
        c = int(rng.integers(2, 7))
        p = _random_distribution(rng, c)
        dec = uncertainty_decomposition(np.tile(p, (int(rng.integers(1, 9)), 1)))
        assert dec.model == 0.0  # exactly, no tolerance
    _passed(4, "10,000 member sets: identity within 1e-9, model >= -1e-9, "
               "identical members give exactly 0")


def test_criterion_05_head_growth(spiral_ensemble):
    rng = np.random.default_rng(40)
    body = build_mlp([2, 16], "relu", rng, final_activation="relu")
    head = build_mlp([16, 8, 4], "relu", rng)
    single = Hydra(body, [head], "classification", 2.0)
    grown = grow_heads(single, 10)

    x = rng.normal(size=(100, 2))
    outputs = grown.forward_members(x)
    for m in range(1, grown.n_heads):
        assert np.array_equal(outputs[m], outputs[0])  # bitwise

    probs = tempered_softmax(outputs, 1.0)
    model_uncertainty = decompose_batch(probs)[2]
    assert np.all(model_uncertainty == 0.0)

    teacher_dist = _random_distribution(rng, 4)
    logits = single.forward_members(x[0])[0]
    kd_loss, _ = kd_classification_loss(teacher_dist, logits, 2.0)
    hydra_loss, _ = hydra_classification_loss(
        teacher_dist[np.newaxis], single, x[0], 2.0
    )
    assert hydra_loss == kd_loss  # bitwise
    _passed(5, "grown heads bitwise identical, MU exactly 0, M=1 loss "
               "bitwise equal to kd")


def test_criterion_06_regression_moment_matching():
    rng = np.random.default_rng(50)
    model = build_mlp([1, 16, 2], "softplus", rng)
    x0 = np.array([[0.5]])
    member_means = np.array([[-1.0], [1.0]])
    member_vars = np.array([[0.25], [0.25]])

    from hydra_distill.distill import _kd_regression_batch

    for lr, steps in ((1e-2, 3000), (1e-4, 2000)):
        opt = Optimizer(kind="adam", learning_rate=lr)
        for _ in range(steps):
            out, pre, post = model.forward_trace(x0)
            _, d = _kd_regression_batch(out, member_means, member_vars)
            grads, _ = model.backward_from_trace(pre, post, d)
            opt.step(model, grads)

    out = model.forward(x0)[0]
    mean = float(out[0])
    variance = float(variance_from_raw(out[1]))
    assert abs(mean - 0.0) < 1e-3
    assert abs(variance - 1.25) < 1e-2
    _passed(6, f"frozen-input student converged to N({mean:.2e}, "
               f"{variance:.4f}) vs N(0, 1.25)")


def _heteroscedastic_1d(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-4.0, 4.0, size=n)
    noise_std = 0.1 + 0.3 * (1.0 + np.cos(x)) / 2.0
    y = 0.7 * np.sin(2.0 * x) + 0.5 * x + rng.normal(0.0, noise_std)
    return Dataset(x.reshape(-1, 1), y)


def test_criterion_07_regression_distillation_pattern():
    wins = 0
    outcomes = []
    for seed in (0, 1, 2):
        dataset = _heteroscedastic_1d(500, seed=40 + seed)
        train, val, test = train_val_test_split(dataset, (0.8, 0.1, 0.1),
                                                seed=17)
        train, (val, test), scaler = standardize(train, [val, test])
        teacher = DeepEnsembleRegressor(hidden_layers=(50,), n_members=5,
                                        max_epochs=300, patience=20,
                                        seed=200 + seed)
        teacher.fit(train.x, train.y, validation_data=(val.x, val.y))

        def test_nll(model):
            means, variances = model.predict_member_gaussians(test.x)
            means, variances = scaler.destandardize_gaussians(means, variances)
            return nll((means, variances),
                       scaler.inverse_transform_targets(test.y),
                       task="regression")

        kd = KDRegressor(teacher=teacher, hidden_layers=(50,), max_epochs=300,
                         patience=20, seed=300 + seed)
        kd.fit(train.x, validation_data=(val.x,))
        hydra = HydraRegressor(teacher=teacher, body_hidden=(50,),
                               head_hidden=(10,), phase1_epochs=300,
                               phase2_epochs=300, patience=20, seed=300 + seed)
        hydra.fit(train.x, validation_data=(val.x,))
        kd_nll, hydra_nll = test_nll(kd), test_nll(hydra)
        outcomes.append((kd_nll, hydra_nll))
        wins += hydra_nll <= kd_nll + 0.02
    assert wins >= 2, f"hydra won {wins}/3 seeds: {outcomes}"
    _passed(7, f"hydra test NLL within +0.02 of kd in {wins}/3 seeds "
               f"{[(round(k, 3), round(h, 3)) for k, h in outcomes]}")


def test_criterion_08_spiral_fidelity(spiral_data, spiral_ensemble,
                                      spiral_hydra, spiral_grid_points):
    test = spiral_data["test"]
    ensemble_acc = accuracy(spiral_ensemble.predict_proba(test.x), test.y)
    hydra_acc = accuracy(spiral_hydra.predict_proba(test.x), test.y)
    assert hydra_acc >= ensemble_acc - 0.02

    mu_teacher = decompose_batch(
        spiral_ensemble.predict_member_proba(spiral_grid_points)
    )[2]
    mu_student = decompose_batch(
        spiral_hydra.predict_member_proba(spiral_grid_points)
    )[2]
    gap_student = mu_gap(mu_student, mu_teacher)
    gap_zero = mu_gap(np.zeros_like(mu_teacher), mu_teacher)
    assert gap_student < gap_zero

    pearson = float(np.corrcoef(mu_student, mu_teacher)[0, 1])
    assert pearson > 0.6
    _passed(8, f"acc {hydra_acc:.3f} vs {ensemble_acc:.3f}, mu_gap "
               f"{gap_student:.4f} < zero-baseline {gap_zero:.4f}, "
               f"pearson {pearson:.3f}")


def test_criterion_09_shift_monotonic_sanity(spiral_data, spiral_ensemble,
                                             spiral_hydra):
    test = spiral_data["test"]
    shifted = apply_shift(test, ShiftSpec("scale", 1.5))
    results = {}
    for name, model in (("ensemble", spiral_ensemble),
                        ("hydra", spiral_hydra)):
        tu_zero = decompose_batch(model.predict_member_proba(test.x))[0].mean()
        tu_high = decompose_batch(
            model.predict_member_proba(shifted.x)
        )[0].mean()
        assert tu_high > tu_zero, f"{name}: {tu_high} vs {tu_zero}"
        results[name] = (tu_zero, tu_high)
    _passed(9, "mean TU rises under the strongest shift for both models: "
               + ", ".join(f"{k} {v[0]:.3f}->{v[1]:.3f}"
                           for k, v in results.items()))


def test_criterion_10_reproducibility(tmp_path):
    config = {
        "schema_version": 1,
        "seed": 0,
        "task": "classification",
        "dataset": {"kind": "spiral", "n_per_class": 40, "n_classes": 3,
                    "noise_std": 0.1, "seed": 9},
        "split": {"fractions": [0.7, 0.15, 0.15], "seed": 3},
        "ensemble": {"n_members": 2, "hidden_layers": [12], "seed": 1},
        "student": {"method": "hydra", "temperature": 2.0,
                    "body_hidden": [12], "head_hidden": [8],
                    "phase1_epochs": 4, "phase2_epochs": 3, "seed": 2},
        "optimizer": {"learning_rate": 0.003, "batch_size": 16,
                      "max_epochs": 5, "patience": 10},
        "shift_sweep": [{"kind": "scale", "intensity": 0.0},
                        {"kind": "scale", "intensity": 1.0}],
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))

    compared = []
    for run in ("a", "b"):
        base = tmp_path / run
        ens = base / "ens"
        assert cli_main(["train-ensemble", "--config", str(cfg), "--out",
                         str(ens)]) == 0
        hydra_out = base / "hydra"
        assert cli_main(["distill", "--config", str(cfg), "--teacher",
                         str(ens), "--out", str(hydra_out)]) == 0
        kd_out = base / "kd"
        assert cli_main(["distill", "--config", str(cfg), "--teacher",
                         str(ens), "--out", str(kd_out), "--method",
                         "kd"]) == 0
        eval_out = base / "eval"
        assert cli_main(["evaluate", "--config", str(cfg), "--model",
                         str(hydra_out / "student"), "--teacher", str(ens),
                         "--out", str(eval_out)]) == 0
        assert cli_main(["uncertainty-grid", "--model", str(ens), "--out",
                         str(base / "grid.tsv"), "--bounds", "-6", "6",
                         "--resolution", "10"]) == 0

    files = [
        "ens/manifest.json", "ens/member_000.json", "ens/member_001.json",
        "ens/summary.tsv",
        "hydra/student/manifest.json", "hydra/student/body.json",
        "hydra/student/head_000.json", "hydra/student/head_001.json",
        "hydra/curves.tsv", "hydra/summary.tsv",
        "kd/student.json", "kd/curves.tsv",
        "eval/report.tsv",
        "grid.tsv",
    ]
    for rel in files:
        a, b = tmp_path / "a" / rel, tmp_path / "b" / rel
        assert a.exists() and b.exists(), f"missing artifact {rel}"
        assert filecmp.cmp(a, b, shallow=False), f"{rel} differs between runs"
        compared.append(rel)
    _passed(10, f"{len(compared)} artifact files byte-identical across reruns")
