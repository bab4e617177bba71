"""Dataset generation, loading, standardization, splits and shift transforms.

Datasets are immutable value objects; loaders either return a complete
dataset or raise a typed error, never a partial one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import (
    ConfigError,
    CorruptionError,
    EmptyDatasetError,
    FormatError,
    ParseError,
    SchemaError,
    ValidationError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SHIFT_KINDS = ("rotate", "translate_cyclic", "scale")

# Degenerate feature columns (std below this) are centered but not scaled.
_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus per-row targets.

    Targets are integer class indices (classification) or float values
    (regression); the task is read off the target dtype. Arrays are frozen
    after construction so datasets can be shared freely.
    """

    x: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y)
        if x.ndim != 2:
            raise ValidationError(f"inputs must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValidationError(
                f"targets {y.shape} do not pair with inputs {x.shape}"
            )
        if np.issubdtype(y.dtype, np.integer):
            y = y.astype(np.int64)
        else:
            y = y.astype(np.float64)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.y.dtype, np.integer)

    @property
    def n_classes(self) -> int:
        if not self.is_classification:
            raise ValidationError("n_classes is undefined for regression targets")
        return int(self.y.max()) + 1 if len(self) else 0

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.x[idx].copy(), self.y[idx].copy(), self.feature_names)


@dataclass(frozen=True)
class ShiftSpec:
    """A distribution-shift transform and its intensity.

    ``rotate``: bilinear rotation of each image by ``intensity`` degrees.
    ``translate_cyclic``: horizontal wrap-around roll by ``floor(intensity)``
    pixels. Both need ``image_shape`` = (height, width) consistent with the
    flat feature dimension. ``scale``: multiply all features by
    ``1 + intensity`` (no image shape needed). Intensity 0 is the identity
    for every kind.
    """

    kind: str
    intensity: float
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ValidationError(f"unknown shift kind {self.kind!r}")
        if not np.isfinite(self.intensity):
            raise ValidationError("shift intensity must be finite")
        if self.kind in ("rotate", "translate_cyclic"):
            if self.image_shape is None:
                raise ValidationError(f"{self.kind} shift needs an image_shape")
            h, w = self.image_shape
            if h < 1 or w < 1:
                raise ValidationError(f"bad image_shape {self.image_shape}")
            object.__setattr__(self, "image_shape", (int(h), int(w)))


def make_spiral(
    n_per_class: int,
    n_classes: int,
    noise_std: float,
    seed: int,
    radius: float = 4.0,
    turns_angle: float = 3.0 * np.pi,
) -> Dataset:
    """Interleaved 2-D spiral arms, one arm per class.

    Each arm sweeps an angle in ``[0, turns_angle]`` with radius growing
    linearly to ``radius`` and a per-class phase offset of ``2*pi*c /
    n_classes``; Gaussian noise of ``noise_std`` is added to both
    coordinates. Deterministic for a fixed seed.
    """
    if n_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {n_classes}")
    if n_per_class < 0 or noise_std < 0:
        raise ValidationError("n_per_class and noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(n_classes):
        theta = rng.uniform(0.0, turns_angle, size=n_per_class)
        r = theta / turns_angle * radius
        phase = 2.0 * np.pi * c / n_classes
        pts = np.stack(
            [r * np.cos(theta + phase), r * np.sin(theta + phase)], axis=1
        )
        pts += rng.normal(0.0, noise_std, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return Dataset(
        np.concatenate(xs) if xs else np.zeros((0, 2)),
        np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64),
    )


def _read_be_u32(fh, path) -> int:
    data = fh.read(4)
    if len(data) != 4:
        raise CorruptionError(f"{path}: truncated header")
    return struct.unpack(">I", data)[0]


def load_idx(path) -> np.ndarray:
    """Load one IDX file (big-endian magic plus dimension header).

    Image files (magic 0x00000803) come back as an (N, rows*cols) float
    matrix scaled to [0, 1] by dividing by 255; label files (magic
    0x00000801) as an (N,) int64 vector. Wrong magic raises
    :class:`FormatError`; a payload shorter or longer than the header
    promises raises :class:`CorruptionError`.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_be_u32(fh, path)
        if magic == IDX_IMAGE_MAGIC:
            count = _read_be_u32(fh, path)
            rows = _read_be_u32(fh, path)
            cols = _read_be_u32(fh, path)
            payload = fh.read()
            expected = count * rows * cols
            if len(payload) != expected:
                raise CorruptionError(
                    f"{path}: expected {expected} pixel bytes, got {len(payload)}"
                )
            pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
            return (pixels / 255.0).reshape(count, rows * cols)
        if magic == IDX_LABEL_MAGIC:
            count = _read_be_u32(fh, path)
            payload = fh.read()
            if len(payload) != count:
                raise CorruptionError(
                    f"{path}: expected {count} label bytes, got {len(payload)}"
                )
            return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    raise FormatError(
        f"{path}: bad magic 0x{magic:08x} (expected big-endian 0x{IDX_IMAGE_MAGIC:08x} "
        f"for images or 0x{IDX_LABEL_MAGIC:08x} for labels)"
    )


def load_idx_dataset(images_path, labels_path) -> Dataset:
    """Pair an IDX image file with its label file."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 2:
        raise FormatError(f"{images_path} is not an image file")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path} is not a label file")
    if images.shape[0] != labels.shape[0]:
        raise CorruptionError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    return Dataset(images, labels)


def load_regression_table(path, target_column) -> Dataset:
    """Load a delimited numeric table as a regression dataset.

    The delimiter (comma vs whitespace) is auto-detected from the first
    line, and a header row is assumed when that line is non-numeric.
    ``target_column`` is a column name (header required) or 0-based index;
    the remaining columns become features. Any non-numeric data row raises
    :class:`ParseError` carrying its 1-based line number.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.readlines()
    lines = [
        (i + 1, line.strip()) for i, line in enumerate(raw_lines) if line.strip()
    ]
    if not lines:
        raise EmptyDatasetError(f"{path}: no rows")
    delimiter = "," if "," in lines[0][1] else None

    def split_fields(text: str) -> list[str]:
        fields = text.split(delimiter) if delimiter else text.split()
        return [f.strip() for f in fields]

    header: list[str] | None = None
    first_fields = split_fields(lines[0][1])
    try:
        [float(f) for f in first_fields]
    except ValueError:
        header = first_fields
        lines = lines[1:]
    if not lines:
        raise EmptyDatasetError(f"{path}: header but no data rows")

    n_cols = len(header) if header else len(split_fields(lines[0][1]))
    if isinstance(target_column, str):
        if header is None:
            raise SchemaError(
                f"{path}: column {target_column!r} requested but file has no header"
            )
        if target_column not in header:
            raise SchemaError(f"{path}: no column named {target_column!r}")
        target_idx = header.index(target_column)
    else:
        target_idx = int(target_column)
        if not 0 <= target_idx < n_cols:
            raise SchemaError(
                f"{path}: target column {target_idx} out of range for {n_cols} columns"
            )

    rows = []
    for line_no, text in lines:
        fields = split_fields(text)
        if len(fields) != n_cols:
            raise ParseError(
                f"expected {n_cols} fields, got {len(fields)}", line_no
            )
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ParseError(str(exc), line_no) from None
    table = np.asarray(rows, dtype=np.float64)
    mask = np.ones(n_cols, dtype=bool)
    mask[target_idx] = False
    names = (
        tuple(name for i, name in enumerate(header) if i != target_idx)
        if header
        else None
    )
    return Dataset(table[:, mask], table[:, target_idx], feature_names=names)


@dataclass
class Standardizer:
    """Per-column affine transform fitted on a training set.

    Columns whose standard deviation falls below 1e-8 are centered but not
    scaled. For regression datasets the targets are standardized with their
    own retained (mean, std), so scores can be mapped back to the original
    target scale.
    """

    x_mean: np.ndarray = field(default=None)
    x_scale: np.ndarray = field(default=None)
    y_mean: float | None = None
    y_scale: float | None = None

    def fit(self, train: Dataset) -> "Standardizer":
        if len(train) == 0:
            raise ValidationError("cannot standardize an empty dataset")
        self.x_mean = train.x.mean(axis=0)
        std = train.x.std(axis=0)
        self.x_scale = np.where(std < _STD_FLOOR, 1.0, std)
        if not train.is_classification:
            self.y_mean = float(train.y.mean())
            y_std = float(train.y.std())
            self.y_scale = 1.0 if y_std < _STD_FLOOR else y_std
        return self

    def transform(self, dataset: Dataset) -> Dataset:
        x = (dataset.x - self.x_mean) / self.x_scale
        y = dataset.y
        if not dataset.is_classification and self.y_mean is not None:
            y = (y - self.y_mean) / self.y_scale
        return Dataset(x, y, dataset.feature_names)

    def inverse_transform_targets(self, y) -> np.ndarray:
        if self.y_mean is None:
            return np.asarray(y, dtype=np.float64)
        return np.asarray(y, dtype=np.float64) * self.y_scale + self.y_mean

    def destandardize_gaussians(self, means, variances):
        """Map standardized-scale Gaussians back to the original target scale."""
        if self.y_mean is None:
            return np.asarray(means, np.float64), np.asarray(variances, np.float64)
        return (
            np.asarray(means, np.float64) * self.y_scale + self.y_mean,
            np.asarray(variances, np.float64) * self.y_scale**2,
        )


def standardize(
    train: Dataset, others: Sequence[Dataset] = ()
) -> tuple[Dataset, list[Dataset], Standardizer]:
    """Fit a :class:`Standardizer` on ``train`` and apply it everywhere."""
    scaler = Standardizer().fit(train)
    return scaler.transform(train), [scaler.transform(d) for d in others], scaler


def _rotate_images(images: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the image center with zero padding.

    ``images`` has shape (N, H, W); positive angles rotate content
    counterclockwise in the (row, col) plane (rotate(img, 90) matches
    ``np.rot90(img, 1)`` on square images).
    """
    n, h, w = images.shape
    angle = np.deg2rad(degrees)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # inverse map: where each output pixel samples from
    src_r = cr + (rows - cr) * np.cos(angle) + (cols - cc) * np.sin(angle)
    src_c = cc - (rows - cr) * np.sin(angle) + (cols - cc) * np.cos(angle)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0

    out = np.zeros_like(images)
    for dr, dc, weight in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc_idx = c0 + dc
        inside = (rr >= 0) & (rr < h) & (cc_idx >= 0) & (cc_idx < w)
        rr_safe = np.clip(rr, 0, h - 1)
        cc_safe = np.clip(cc_idx, 0, w - 1)
        out += np.where(inside, weight, 0.0) * images[:, rr_safe, cc_safe]
    return out


def apply_shift(dataset: Dataset, spec: ShiftSpec) -> Dataset:
    """Apply a distribution-shift transform; targets pass through unchanged."""
    if spec.kind == "scale":
        return Dataset(
            dataset.x * (1.0 + spec.intensity), dataset.y, dataset.feature_names
        )
    h, w = spec.image_shape
    if dataset.n_features != h * w:
        raise ValidationError(
            f"inputs with {dataset.n_features} features cannot be reshaped "
            f"to {h}x{w} images"
        )
    images = dataset.x.reshape(len(dataset), h, w)
    if spec.kind == "translate_cyclic":
        shift = int(np.floor(spec.intensity))
        shifted = np.roll(images, shift, axis=2)
    else:
        if spec.intensity == 0.0:
            shifted = images.copy()
        else:
            shifted = _rotate_images(images, spec.intensity)
    return Dataset(shifted.reshape(len(dataset), h * w), dataset.y,
                   dataset.feature_names)


def _allocate(counts_total: int, fractions: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of ``counts_total`` rows to fractions."""
    ideal = fractions * counts_total
    base = np.floor(ideal).astype(np.int64)
    remainder = counts_total - base.sum()
    order = np.argsort(-(ideal - base), kind="stable")
    for i in range(remainder):
        base[order[i]] += 1
    return base


def split_indices(
    n: int,
    fractions: Sequence[float],
    seed: int,
    stratify_labels: np.ndarray | None = None,
) -> tuple[np.ndarray, ...]:
    """Disjoint index sets covering ``range(n)`` in the given proportions.

    Deterministic for a fixed seed. With ``stratify_labels`` the allocation
    is done per class, keeping each part balanced within one row.
    """
    fracs = np.asarray(fractions, dtype=np.float64)
    if np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-9:
        raise ConfigError(
            f"split fractions must be non-negative and sum to 1, got {list(fracs)}"
        )
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fracs]
    if stratify_labels is None:
        groups = [np.arange(n)]
    else:
        labels = np.asarray(stratify_labels)
        groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    for group in groups:
        shuffled = rng.permutation(group)
        counts = _allocate(len(group), fracs)
        start = 0
        for k, count in enumerate(counts):
            parts[k].append(shuffled[start:start + count])
            start += count
    return tuple(
        np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64)
        for p in parts
    )


def train_val_test_split(
    dataset: Dataset, fractions: Sequence[float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Split into train/validation/test, stratified by class when applicable."""
    if len(fractions) != 3:
        raise ConfigError(f"expected 3 fractions, got {len(fractions)}")
    labels = dataset.y if dataset.is_classification else None
    idx_train, idx_val, idx_test = split_indices(
        len(dataset), fractions, seed, stratify_labels=labels
    )
    return (
        dataset.subset(idx_train),
        dataset.subset(idx_val),
        dataset.subset(idx_test),
    )


def save_split_manifest(path, indices_by_part: dict[str, np.ndarray]) -> None:
    """Write split index sets as plain text, one part per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("format: split-manifest v1\n")
        for name in sorted(indices_by_part):
            values = " ".join(str(int(i)) for i in indices_by_part[name])
            fh.write(f"{name}: {values}\n")
