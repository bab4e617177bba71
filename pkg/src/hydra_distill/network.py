"""Dense feed-forward networks with analytic gradients.

Everything here is plain numpy: layers are value-like records of weights,
biases and an activation tag, and the forward/backward pair is exact (the
backward pass is the hand-derived adjoint of the forward pass, checked
against finite differences in the test suite). Optimizers (SGD, Adam) and a
lossless text checkpoint format round out the module.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import CheckpointError, TrainingError, ValidationError
from .validation import (
    check_matrix,
    check_positive_variance,
    check_temperature,
)

ACTIVATIONS = ("relu", "softplus", "identity")

# Variance head: raw output is log-variance, exponentiated and clamped on read.
VARIANCE_FLOOR = 1e-6
VARIANCE_CEILING = 1e6

CHECKPOINT_FORMAT = "dense-mlp"
CHECKPOINT_VERSION = 1


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _relu_grad(z: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(np.float64)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form stays finite for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACTIVATION_FN = {"relu": _relu, "softplus": _softplus, "identity": lambda z: z}
_ACTIVATION_GRAD = {
    "relu": _relu_grad,
    "softplus": _sigmoid,
    "identity": lambda z: np.ones_like(z),
}


@dataclass
class Layer:
    """One dense layer: ``activation(weights @ x + bias)``.

    ``weights`` has shape (out, in), ``bias`` shape (out,).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValidationError(f"weights must be 2-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValidationError(
                f"bias shape {self.bias.shape} does not match weights "
                f"{self.weights.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.activation)


class Mlp:
    """A dense feed-forward network over a chain of :class:`Layer` records.

    The record is value-like: ``forward`` is pure, ``copy`` deep-copies
    parameters, and two models with identical parameters produce bitwise
    identical outputs.
    """

    def __init__(self, layers: Sequence[Layer]):
        layers = list(layers)
        if not layers:
            raise ValidationError("an Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValidationError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "Mlp":
        return Mlp([layer.copy() for layer in self.layers])

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr.reshape(1, -1)
        arr = check_matrix(arr, "input", n_features=self.input_dim)
        return arr, single

    def forward(self, x) -> np.ndarray:
        """Evaluate the network on one input (1-D) or a batch (2-D)."""
        batch, single = self._as_batch(x)
        out = batch
        for layer in self.layers:
            out = _ACTIVATION_FN[layer.activation](out @ layer.weights.T + layer.bias)
        return out[0] if single else out

    def forward_trace(self, x: np.ndarray) -> tuple[np.ndarray, list, list]:
        """Forward pass that keeps pre/post activations for ``backward_from_trace``.

        ``x`` must already be a validated 2-D batch.
        """
        pre, post = [], [x]
        out = x
        for layer in self.layers:
            z = out @ layer.weights.T + layer.bias
            out = _ACTIVATION_FN[layer.activation](z)
            pre.append(z)
            post.append(out)
        return out, pre, post

    def backward_from_trace(
        self, pre: list, post: list, upstream: np.ndarray
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Adjoint pass given a stored trace.

        Returns per-layer ``(dW, db)`` gradients of ``sum_n <upstream_n,
        output_n>`` plus the gradient with respect to the input batch.
        """
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        g = upstream
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            dz = g * _ACTIVATION_GRAD[layer.activation](pre[k])
            grads[k] = (dz.T @ post[k], dz.sum(axis=0))
            g = dz @ layer.weights
        return grads, g

    def backward(
        self, x, upstream
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Gradient of ``<upstream, forward(x)>`` with respect to all parameters.

        ``x`` may be one input (1-D) with a 1-D upstream gradient, or a batch
        with one upstream row per input (gradients are summed over the batch).
        Also returns the gradient with respect to ``x``.
        """
        batch, single = self._as_batch(x)
        g = np.asarray(upstream, dtype=np.float64)
        if single:
            g = g.reshape(1, -1)
        if g.shape != (batch.shape[0], self.output_dim):
            raise ValidationError(
                f"upstream gradient shape {np.asarray(upstream).shape} does not "
                f"match output dim {self.output_dim}"
            )
        _, pre, post = self.forward_trace(batch)
        grads, input_grad = self.backward_from_trace(pre, post, g)
        return grads, input_grad[0] if single else input_grad


def zero_gradients(model: Mlp) -> list[tuple[np.ndarray, np.ndarray]]:
    """All-zero gradients shaped like the model's parameters."""
    return [
        (np.zeros_like(layer.weights), np.zeros_like(layer.bias))
        for layer in model.layers
    ]


def add_gradients(a, b):
    """Elementwise sum of two gradient lists."""
    return [(aw + bw, ab + bb) for (aw, ab), (bw, bb) in zip(a, b)]


def scale_gradients(grads, factor: float):
    return [(factor * gw, factor * gb) for gw, gb in grads]


def build_mlp(
    dims: Sequence[int],
    activation: str,
    rng: np.random.Generator,
    final_activation: str = "identity",
) -> Mlp:
    """Construct an MLP with fan-in-scaled uniform initialization.

    ``dims`` lists the layer widths including input and output, e.g.
    ``[2, 100, 100, 4]``. Hidden layers use ``activation``; the last layer
    uses ``final_activation`` (identity by default, so the network emits raw
    logits or regression outputs). Relu layers draw from a He-style uniform
    range, softplus and identity layers from a Glorot-style range.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValidationError(f"need at least input and output dims, got {dims}")
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        act = final_activation if k == len(dims) - 2 else activation
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(weights, np.zeros(fan_out), act))
    return Mlp(layers)


def count_params(model) -> int:
    """Total trainable parameter count.

    Accepts a plain :class:`Mlp` or any object exposing ``body`` and
    ``heads`` (a multi-headed student), in which case the body and every
    head are summed.
    """
    if hasattr(model, "body") and hasattr(model, "heads"):
        return count_params(model.body) + sum(count_params(h) for h in model.heads)
    return sum(layer.weights.size + layer.bias.size for layer in model.layers)


def tempered_softmax(logits, temperature) -> np.ndarray:
    """Softmax of ``logits / temperature`` along the last axis.

    Computed with max subtraction so large logits do not overflow; at
    temperature 1 this is the standard softmax. Raises
    :class:`TemperatureError` for non-positive temperatures.
    """
    t = check_temperature(temperature)
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits must be finite")
    z = z / t
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_tempered_softmax(logits, temperature) -> np.ndarray:
    """Log of :func:`tempered_softmax`, computed without underflow."""
    t = check_temperature(temperature)
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits must be finite")
    z = z / t
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class GaussianPrediction:
    """A single heteroscedastic prediction: mean and strictly positive variance."""

    mean: float
    variance: float

    def __post_init__(self):
        self.mean = float(self.mean)
        self.variance = float(self.variance)
        if not np.isfinite(self.mean):
            raise ValidationError("mean must be finite")
        check_positive_variance(self.variance)


def gaussian_from_outputs(raw) -> GaussianPrediction:
    """Read a network's two regression outputs as (mean, variance).

    The second output is a log-variance; it is exponentiated and clamped to
    ``[1e-6, 1e6]``.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (2,):
        raise ValidationError(f"expected 2 regression outputs, got shape {arr.shape}")
    return GaussianPrediction(arr[0], variance_from_raw(arr[1]))


def variance_from_raw(log_variance) -> np.ndarray:
    """Exponentiate a raw log-variance output and clamp to the legal range."""
    return np.clip(np.exp(np.asarray(log_variance, dtype=np.float64)),
                   VARIANCE_FLOOR, VARIANCE_CEILING)


def chain_logvar_grad(variance, d_variance) -> np.ndarray:
    """Chain a variance gradient back to the raw log-variance output.

    The clamp in :func:`variance_from_raw` is flat outside its range, so the
    gradient is zeroed wherever the variance sits on a clamp boundary.
    """
    active = (variance > VARIANCE_FLOOR) & (variance < VARIANCE_CEILING)
    return np.where(active, d_variance * variance, 0.0)


@dataclass
class Optimizer:
    """SGD or Adam over one network's parameters.

    Accumulator shapes mirror the model's parameter shapes; the state is
    owned by a single trainer. ``step`` updates the model in place and
    rejects non-finite gradients.
    """

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _moments: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer kind {self.kind!r}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValidationError("learning rate must be positive and finite")

    def step(self, model: Mlp, grads) -> None:
        """Apply one update to ``model`` given gradients shaped like it."""
        if len(grads) != len(model.layers):
            raise ValidationError("gradient list does not mirror model layers")
        for layer, (gw, gb) in zip(model.layers, grads):
            if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
                raise ValidationError("gradient shapes do not mirror parameters")
            if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise TrainingError(
                    "step rejected: non-finite gradient",
                    context=f"step {self.step_count + 1}",
                )
        if self.kind == "sgd":
            for layer, (gw, gb) in zip(model.layers, grads):
                layer.weights -= self.learning_rate * gw
                layer.bias -= self.learning_rate * gb
        else:
            if self._moments is None:
                self._moments = [
                    (
                        np.zeros_like(layer.weights),
                        np.zeros_like(layer.weights),
                        np.zeros_like(layer.bias),
                        np.zeros_like(layer.bias),
                    )
                    for layer in model.layers
                ]
            t = self.step_count + 1
            c1 = 1.0 - self.beta1**t
            c2 = 1.0 - self.beta2**t
            for layer, (gw, gb), (mw, vw, mb, vb) in zip(
                model.layers, grads, self._moments
            ):
                mw *= self.beta1
                mw += (1.0 - self.beta1) * gw
                vw *= self.beta2
                vw += (1.0 - self.beta2) * gw * gw
                mb *= self.beta1
                mb += (1.0 - self.beta1) * gb
                vb *= self.beta2
                vb += (1.0 - self.beta2) * gb * gb
                layer.weights -= self.learning_rate * (mw / c1) / (
                    np.sqrt(vw / c2) + self.eps
                )
                layer.bias -= self.learning_rate * (mb / c1) / (
                    np.sqrt(vb / c2) + self.eps
                )
        self.step_count += 1


def mlp_to_document(model: Mlp, meta: dict | None = None) -> dict:
    """Serialize a model to a JSON-ready document.

    Parameters are stored row-major as hexadecimal float strings, which
    round-trip 64-bit values exactly.
    """
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "layers": [
            {
                "in": layer.in_dim,
                "out": layer.out_dim,
                "activation": layer.activation,
                "weights": [v.hex() for v in layer.weights.ravel().tolist()],
                "bias": [v.hex() for v in layer.bias.tolist()],
            }
            for layer in model.layers
        ],
    }


def mlp_from_document(doc: dict) -> tuple[Mlp, dict]:
    """Rebuild a model from :func:`mlp_to_document` output."""
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"not a {CHECKPOINT_FORMAT} checkpoint: format={doc.get('format')!r}"
            if isinstance(doc, dict)
            else "checkpoint document must be a mapping"
        )
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    layers = []
    try:
        for spec in doc["layers"]:
            out_dim, in_dim = int(spec["out"]), int(spec["in"])
            weights = np.array(
                [float.fromhex(v) for v in spec["weights"]], dtype=np.float64
            )
            bias = np.array([float.fromhex(v) for v in spec["bias"]], dtype=np.float64)
            if weights.size != out_dim * in_dim or bias.size != out_dim:
                raise CheckpointError(
                    f"parameter count does not match declared dims "
                    f"({out_dim}x{in_dim})"
                )
            layers.append(
                Layer(weights.reshape(out_dim, in_dim), bias, spec["activation"])
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint document: {exc}") from exc
    try:
        model = Mlp(layers)
    except ValidationError as exc:
        raise CheckpointError(f"invalid checkpoint parameters: {exc}") from exc
    return model, dict(doc.get("meta", {}))


def save_mlp(model: Mlp, path: str | os.PathLike, meta: dict | None = None) -> None:
    """Write a model checkpoint as deterministic JSON text."""
    doc = mlp_to_document(model, meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_mlp(path: str | os.PathLike) -> tuple[Mlp, dict]:
    """Read a checkpoint written by :func:`save_mlp`."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return mlp_from_document(doc)
