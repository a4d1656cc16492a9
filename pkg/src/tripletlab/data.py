"""Synthetic clustered data, two-view augmentation, and file ingestion.

Classes are isotropic Gaussian blobs whose centers are drawn on a sphere of
radius ``center_separation``; augmentation turns one item into two
stochastic views (scale jitter, coordinate dropout, additive noise). Every
function is a pure function of its explicit spec/seed/rng arguments.

Under uniform sampling, the chance that a random negative shares the
anchor's class is p = (samples_per_class - 1) / (N - 1), approximately
1/num_classes, which is the ``p`` the binomial risk model consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BatchTooSmallError,
    InvalidSpecError,
    NonFiniteValueError,
    ParseError,
    RowCountMismatchError,
)
from .geometry import as_embedding_batch


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_classes: int = 10
    samples_per_class: int = 200
    ambient_dim: int = 32
    center_separation: float = 4.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidSpecError("num_classes must be >= 2")
        if self.samples_per_class < 1:
            raise InvalidSpecError("samples_per_class must be >= 1")
        if self.ambient_dim < 2:
            raise InvalidSpecError("ambient_dim must be >= 2")
        if not self.center_separation > 0:
            raise InvalidSpecError("center_separation must be positive")
        if self.noise_sigma < 0:
            raise InvalidSpecError("noise_sigma must be nonnegative")

    @property
    def total_size(self) -> int:
        return self.num_classes * self.samples_per_class

    @property
    def same_class_negative_rate(self) -> float:
        """Analytic p: probability a uniformly drawn negative is same-class."""
        n = self.total_size
        return (self.samples_per_class - 1) / (n - 1)


@dataclass(frozen=True)
class AugmentationSpec:
    additive_noise_sigma: float = 0.3
    coordinate_dropout_rate: float = 0.1
    scale_jitter_lo: float = 0.9
    scale_jitter_hi: float = 1.1

    def __post_init__(self):
        if self.additive_noise_sigma < 0:
            raise InvalidSpecError("additive_noise_sigma must be nonnegative")
        if not 0.0 <= self.coordinate_dropout_rate <= 1.0:
            raise InvalidSpecError("coordinate_dropout_rate must lie in [0, 1]")
        if not 0 < self.scale_jitter_lo <= self.scale_jitter_hi:
            raise InvalidSpecError("scale jitter range needs 0 < lo <= hi")


IDENTITY_AUGMENTATION = AugmentationSpec(0.0, 0.0, 1.0, 1.0)


def generate_blobs(spec: SyntheticDatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced Gaussian blobs; labels come out as [0]*spc + [1]*spc + ...

    Centers are random directions scaled to ``center_separation``; items add
    isotropic noise of scale ``noise_sigma``. Bit-identical for equal specs.
    """
    rng = np.random.default_rng(spec.seed)
    directions = rng.standard_normal((spec.num_classes, spec.ambient_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = spec.center_separation * directions
    items = np.repeat(centers, spec.samples_per_class, axis=0)
    items = items + spec.noise_sigma * rng.standard_normal(items.shape)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    return items, labels


def augment(item, spec: AugmentationSpec, stream_seed: int) -> np.ndarray:
    """One stochastic view of an item, deterministic in the stream seed.

    Applies, in order: uniform scale jitter, independent coordinate dropout,
    additive isotropic noise.
    """
    item = np.asarray(item, dtype=np.float64)
    rng = np.random.default_rng(stream_seed)
    scale = rng.uniform(spec.scale_jitter_lo, spec.scale_jitter_hi)
    out = scale * item
    if spec.coordinate_dropout_rate > 0:
        keep = rng.random(item.shape) >= spec.coordinate_dropout_rate
        out = out * keep
    if spec.additive_noise_sigma > 0:
        out = out + spec.additive_noise_sigma * rng.standard_normal(item.shape)
    return out


@dataclass
class ContrastiveBatch:
    """Two augmented views of b items plus labels hidden from the losses.

    Views stack as [all view-A rows, then all view-B rows]; for anchor item
    i the negatives are every view of the other items, m = 2(b-1). Labels
    and source item indices exist for the diagnostics only.
    """

    view_a: np.ndarray
    view_b: np.ndarray
    hidden_labels: np.ndarray
    item_indices: np.ndarray

    def __post_init__(self):
        b = self.view_a.shape[0]
        if self.view_b.shape != self.view_a.shape:
            raise InvalidSpecError("view_a and view_b must share a shape")
        if self.hidden_labels.shape != (b,) or self.item_indices.shape != (b,):
            raise InvalidSpecError("labels/item indices must have one entry per item")

    @property
    def batch_size(self) -> int:
        return self.view_a.shape[0]

    @property
    def num_negatives(self) -> int:
        return 2 * (self.batch_size - 1)

    def stacked_views(self) -> np.ndarray:
        return np.vstack([self.view_a, self.view_b])

    def negative_indices(self, anchor_item: int) -> np.ndarray:
        """Indices into stacked_views() of all views of items != anchor_item."""
        b = self.batch_size
        others = np.concatenate([np.arange(anchor_item), np.arange(anchor_item + 1, b)])
        return np.concatenate([others, others + b])


def sample_contrastive_batch(items, labels, batch_size: int,
                             aug_spec: AugmentationSpec,
                             rng: np.random.Generator) -> ContrastiveBatch:
    """Draw b distinct items and augment each twice.

    Consumes the caller's generator (item choice, then one stream seed per
    view), so sequential calls with one seeded generator are reproducible.
    """
    items = np.asarray(items, dtype=np.float64)
    labels = np.asarray(labels)
    n = items.shape[0]
    if batch_size < 2:
        raise BatchTooSmallError("batch_size must be >= 2 so negatives exist")
    if batch_size > n:
        raise BatchTooSmallError(f"batch_size {batch_size} exceeds dataset size {n}")
    idx = rng.choice(n, size=batch_size, replace=False)
    seeds = rng.integers(0, 2**63, size=2 * batch_size)
    view_a = np.stack([
        augment(items[i], aug_spec, int(seeds[j])) for j, i in enumerate(idx)
    ])
    view_b = np.stack([
        augment(items[i], aug_spec, int(seeds[batch_size + j])) for j, i in enumerate(idx)
    ])
    return ContrastiveBatch(view_a, view_b, labels[idx], idx)


def write_embeddings(path, batch) -> None:
    """Write the `dim=<d>` header plus one comma-separated row per line."""
    arr = as_embedding_batch(batch)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"dim={arr.shape[1]}\n")
        for row in arr:
            fh.write(",".join(repr(float(x)) for x in row))
            fh.write("\n")


def write_labels(path, labels) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for label in np.asarray(labels).ravel():
            fh.write(f"{int(label)}\n")


def _parse_embedding_file(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise ParseError("embedding file must start with a `dim=<d>` header", line=1)
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise ParseError(f"bad dimension {lines[0][4:]!r}", line=1) from None
    if dim < 1:
        raise ParseError("dimension must be >= 1", line=1)
    rows = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        tokens = text.split(",")
        if len(tokens) != dim:
            raise ParseError(f"expected {dim} values, found {len(tokens)}", line=lineno)
        try:
            row = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not all(np.isfinite(row)):
            raise NonFiniteValueError("non-finite embedding value", line=lineno)
        rows.append(row)
    if not rows:
        raise ParseError("embedding file has no data rows", line=1)
    return np.array(rows, dtype=np.float64)


def _parse_label_file(path) -> np.ndarray:
    labels = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise ParseError(f"bad label {text!r}", line=lineno) from None
            if value < 0:
                raise ParseError(f"label {value} is negative", line=lineno)
            labels.append(value)
    return np.array(labels, dtype=np.int64)


def read_labeled_embeddings(embedding_file, label_file) -> tuple[np.ndarray, np.ndarray]:
    """Parse an embedding dump and its label file; row counts must agree."""
    embeddings = _parse_embedding_file(embedding_file)
    labels = _parse_label_file(label_file)
    if embeddings.shape[0] != labels.shape[0]:
        raise RowCountMismatchError(
            f"{embeddings.shape[0]} embedding rows vs {labels.shape[0]} labels"
        )
    return embeddings, labels
