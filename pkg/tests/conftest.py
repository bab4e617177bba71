"""Session-scoped fixtures for the desk-scale spiral experiment.

Training the spiral teacher and its students is the expensive part of the
suite, so one set of models is shared by the behavioral tests and the
acceptance suite. Everything is seeded; reruns produce identical models.
"""

import numpy as np
import pytest

from hydra_distill import (
    DeepEnsembleClassifier,
    HydraClassifier,
    KDClassifier,
    make_spiral,
    train_val_test_split,
)


@pytest.fixture(scope="session")
def spiral_data():
    dataset = make_spiral(500, 4, 0.1, seed=7)
    train, val, test = train_val_test_split(dataset, (0.8, 0.1, 0.1), seed=11)
    return {"full": dataset, "train": train, "val": val, "test": test}


@pytest.fixture(scope="session")
def spiral_ensemble(spiral_data):
    ensemble = DeepEnsembleClassifier(
        hidden_layers=(100, 100),
        n_members=10,
        max_epochs=150,
        patience=20,
        seed=100,
    )
    ensemble.fit(
        spiral_data["train"].x,
        spiral_data["train"].y,
        validation_data=(spiral_data["val"].x, spiral_data["val"].y),
    )
    return ensemble


@pytest.fixture(scope="session")
def spiral_hydra(spiral_data, spiral_ensemble):
    student = HydraClassifier(
        teacher=spiral_ensemble,
        body_hidden=(100, 100),
        head_hidden=(100, 100),
        temperature=2.0,
        phase1_epochs=200,
        phase2_epochs=400,
        patience=40,
        seed=5,
    )
    student.fit(
        spiral_data["train"].x,
        spiral_data["train"].y,
        validation_data=(spiral_data["val"].x, spiral_data["val"].y),
    )
    return student


@pytest.fixture(scope="session")
def spiral_kd(spiral_data, spiral_ensemble):
    student = KDClassifier(
        teacher=spiral_ensemble,
        hidden_layers=(100, 100),
        temperature=2.0,
        max_epochs=200,
        patience=20,
        seed=5,
    )
    student.fit(
        spiral_data["train"].x,
        spiral_data["train"].y,
        validation_data=(spiral_data["val"].x, spiral_data["val"].y),
    )
    return student


@pytest.fixture(scope="session")
def spiral_grid_points(spiral_data):
    """50x50 lattice over 1.5x the data bounding box."""
    span = 1.5 * max(
        abs(float(spiral_data["full"].x.min())),
        abs(float(spiral_data["full"].x.max())),
    )
    axis = np.linspace(-span, span, 50)
    xx, yy = np.meshgrid(axis, axis)
    return np.column_stack([xx.ravel(), yy.ravel()])
