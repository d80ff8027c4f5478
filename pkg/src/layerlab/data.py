"""Dataset generation, whitening, and IDX-format I/O.

The synthetic pipeline mirrors the regression task the linear-network
experiments run on: inputs drawn from a Gaussian mixture, targets produced
by a fixed linear teacher, inputs whitened so the input covariance is the
identity.  ``load_idx``/``write_idx`` speak the standard big-endian IDX
layout used by the MNIST distribution files.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    RankDeficiencyError,
    ShapeError,
)

__all__ = [
    "ClassBatch",
    "Dataset",
    "MixtureSpec",
    "dataset_to_csv",
    "gen_gaussian_mixture",
    "gen_linear_targets",
    "input_second_moment",
    "load_idx",
    "make_mixture_regression",
    "whiten",
    "write_idx",
]

_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049

# Sample covariances below this eigenvalue are treated as singular.
_WHITEN_EIG_FLOOR = 1e-10


@dataclass
class Dataset:
    """Paired regression samples; rows of ``inputs``/``targets`` are samples.

    ``teacher`` is kept when targets came from a linear map so whitening can
    regenerate them against the transformed inputs.
    """

    inputs: np.ndarray
    targets: np.ndarray
    whitened: bool = False
    seed: int | None = None
    teacher: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("inputs and targets must be 2-D sample-major arrays")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(
                f"sample counts differ: {self.inputs.shape[0]} inputs vs "
                f"{self.targets.shape[0]} targets"
            )
        if self.inputs.shape[0] == 0:
            raise ShapeError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(self.inputs))
                and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True)
class MixtureSpec:
    """Shape of the synthetic Gaussian-mixture input distribution."""

    components: int = 3
    samples_per_component: int = 400
    dim: int = 10

    def __post_init__(self):
        if self.components < 1 or self.samples_per_component < 1 or self.dim < 1:
            raise ValueError("mixture counts and dimension must be positive")

    @property
    def n_samples(self) -> int:
        return self.components * self.samples_per_component


@dataclass(frozen=True)
class ClassBatch:
    """Classification batch with one-hot targets."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=np.float64))
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("batch inputs and targets must be 2-D")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError("batch inputs and targets disagree on sample count")
        if not np.allclose(self.targets.sum(axis=1), 1.0):
            raise ValueError("each target row must be one-hot (sum to 1)")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.targets, axis=1)


def _random_rotation(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def gen_gaussian_mixture(spec: MixtureSpec, seed: int) -> np.ndarray:
    """Draw inputs from a mixture of rotated, scaled Gaussians.

    Component means are uniform in [-3, 3]^dim; each covariance is
    R @ diag(s) @ R.T with R a random rotation and s uniform in [0.5, 2].
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(spec.components):
        mean = rng.uniform(-3.0, 3.0, size=spec.dim)
        rot = _random_rotation(rng, spec.dim)
        scales = rng.uniform(0.5, 2.0, size=spec.dim)
        z = rng.standard_normal((spec.samples_per_component, spec.dim))
        blocks.append(mean + (z * np.sqrt(scales)) @ rot.T)
    return np.vstack(blocks)


def gen_linear_targets(
    inputs: np.ndarray,
    teacher_shape: tuple[int, int],
    seed: int,
    scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Produce targets ``y_i = T x_i`` from a random teacher matrix T.

    Returns (targets, teacher); teacher entries are i.i.d. normal with
    standard deviation ``scale``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    k, d = teacher_shape
    if inputs.shape[1] != d:
        raise ShapeError(
            f"teacher expects inputs of dimension {d}, got {inputs.shape[1]}"
        )
    rng = np.random.default_rng(seed)
    teacher = scale * rng.standard_normal((k, d))
    return inputs @ teacher.T, teacher


def input_second_moment(inputs: np.ndarray) -> np.ndarray:
    """Uncentered sample covariance (1/m) * X.T @ X."""
    inputs = np.asarray(inputs, dtype=np.float64)
    return inputs.T @ inputs / inputs.shape[0]


def whiten(data: Dataset) -> Dataset:
    """Transform inputs so their sample covariance is the identity.

    Applies the symmetric inverse square root of the input covariance.  When
    the dataset carries a teacher, targets are regenerated against the
    transformed inputs so the input-output covariance equals the teacher
    exactly; otherwise targets are left alone and a note records that.

    Raises:
        RankDeficiencyError: the input covariance has an eigenvalue at or
            below the singularity floor (e.g. fewer samples than dimensions).
    """
    cov = input_second_moment(data.inputs)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals.min() <= _WHITEN_EIG_FLOOR:
        raise RankDeficiencyError(
            "input covariance is numerically singular: smallest eigenvalue "
            f"{eigvals.min():.3e} <= {_WHITEN_EIG_FLOOR:.0e}"
        )
    inv_sqrt = (eigvecs / np.sqrt(eigvals)) @ eigvecs.T
    new_inputs = data.inputs @ inv_sqrt  # inv_sqrt is symmetric
    notes = list(data.notes)
    if data.teacher is not None:
        new_targets = new_inputs @ data.teacher.T
    else:
        new_targets = data.targets
        notes.append("whitened inputs without regenerating targets (no teacher)")
    return replace(
        data, inputs=new_inputs, targets=new_targets, whitened=True, notes=notes
    )


def make_mixture_regression(
    spec: MixtureSpec,
    n_targets: int,
    seed: int,
    teacher_scale: float = 1.0,
    whiten_inputs: bool = True,
) -> Dataset:
    """Full synthetic pipeline: mixture inputs, linear targets, whitening."""
    inputs = gen_gaussian_mixture(spec, seed)
    targets, teacher = gen_linear_targets(
        inputs, (n_targets, spec.dim), seed + 1, scale=teacher_scale
    )
    data = Dataset(inputs=inputs, targets=targets, seed=seed, teacher=teacher)
    return whiten(data) if whiten_inputs else data


def dataset_to_csv(data: Dataset, path) -> None:
    """Write samples as CSV with header x0..x{d-1},y0..y{k-1}."""
    header = [f"x{i}" for i in range(data.input_dim)]
    header += [f"y{i}" for i in range(data.target_dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, y in zip(data.inputs, data.targets):
            writer.writerow([f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in y])


def _read_exact(fh, count: int, what: str, path) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise IdxTruncatedError(
            f"{path}: expected {count} more bytes for {what}, got {len(buf)}"
        )
    return buf


def load_idx(images_path, labels_path, limit: int | None = None) -> ClassBatch:
    """Read an IDX image/label file pair into a classification batch.

    Pixels are scaled to [0, 1]; labels are one-hot over 10 classes.  When
    ``limit`` is given only the first ``limit`` samples are materialized.

    Raises:
        IdxMagicError: a header magic number is wrong.
        IdxTruncatedError: a payload is shorter than its header promises.
        IdxCountMismatchError: the two files disagree on the sample count.
    """
    with open(images_path, "rb") as fh:
        magic, n_images, rows, cols = struct.unpack(
            ">iiii", _read_exact(fh, 16, "image header", images_path)
        )
        if magic != _IMAGE_MAGIC:
            raise IdxMagicError(
                f"{images_path}: image magic {magic}, expected {_IMAGE_MAGIC}"
            )
        n_read = n_images if limit is None else min(limit, n_images)
        raw = _read_exact(fh, n_read * rows * cols, "image payload", images_path)
        pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
        inputs = pixels.reshape(n_read, rows * cols)

    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(
            ">ii", _read_exact(fh, 8, "label header", labels_path)
        )
        if magic != _LABEL_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: label magic {magic}, expected {_LABEL_MAGIC}"
            )
        if n_labels != n_images:
            raise IdxCountMismatchError(
                f"label count {n_labels} != image count {n_images}"
            )
        raw = _read_exact(fh, n_read, "label payload", labels_path)
        labels = np.frombuffer(raw, dtype=np.uint8)

    targets = np.zeros((n_read, 10))
    targets[np.arange(n_read), labels] = 1.0
    return ClassBatch(inputs=inputs, targets=targets)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (m, rows, cols) and labels (m,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ShapeError("images must be (m, rows, cols)")
    if labels.shape[0] != images.shape[0]:
        raise ShapeError("images and labels disagree on sample count")
    m, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", _IMAGE_MAGIC, m, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", _LABEL_MAGIC, m))
        fh.write(labels.tobytes())
