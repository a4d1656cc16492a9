"""Cosine-distance kernels shared by the losses and the diagnostics.

All distances here are negated cosine similarities,

    d(x, y) = -(x . y) / (|x| |y|),

so parallel vectors sit at -1, orthogonal at 0, anti-parallel at +1, and
"smaller distance" always means "more similar". Everything is computed in
float64; zero-norm vectors are a hard error rather than a silent epsilon.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyRowError,
    NonFiniteValueError,
    ZeroVectorError,
)

# Norms below this are treated as zero vectors.
ZERO_NORM_THRESHOLD = 1e-30


def as_embedding_batch(data) -> np.ndarray:
    """Validate and return an n x d float64 matrix of finite embeddings."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatchError(
            f"embedding batch must be a 2-D matrix with n,d >= 1, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise NonFiniteValueError("embedding batch contains NaN or Inf")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction.

    Raises ZeroVectorError when |v| < 1e-30.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / norm


def cosine_distance(x, y) -> float:
    """Negated cosine similarity of two nonzero vectors of equal dimension."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatchError(f"vector shapes differ: {x.shape} vs {y.shape}")
    return float(-np.dot(l2_normalize(x), l2_normalize(y)))


def normalize_rows(batch: np.ndarray, *, side: str = "batch") -> np.ndarray:
    """Row-wise unit normalization; names the offending row on zero norm."""
    batch = np.asarray(batch, dtype=np.float64)
    norms = np.linalg.norm(batch, axis=1)
    bad = np.flatnonzero(norms < ZERO_NORM_THRESHOLD)
    if bad.size:
        raise ZeroVectorError(f"{side} row {int(bad[0])} has zero norm")
    return batch / norms[:, None]


def pairwise_distance_matrix(queries, candidates) -> np.ndarray:
    """Cosine-distance matrix between two batches.

    Entry (i, j) equals ``cosine_distance(queries[i], candidates[j])`` to
    within 1e-12; rows and columns follow the input order.
    """
    q = as_embedding_batch(queries)
    c = as_embedding_batch(candidates)
    if q.shape[1] != c.shape[1]:
        raise DimensionMismatchError(
            f"query dim {q.shape[1]} != candidate dim {c.shape[1]}"
        )
    qn = normalize_rows(q, side="queries")
    cn = normalize_rows(c, side="candidates")
    return -(qn @ cn.T)


def ascending_sort_indices(row) -> np.ndarray:
    """Permutation putting a distance row in ascending order, stable on ties.

    Equal values keep their original relative order, which makes deputy
    selection reproducible run to run.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise EmptyRowError(f"need a nonempty 1-D row, got shape {row.shape}")
    if not np.isfinite(row).all():
        raise NonFiniteValueError("distance row contains NaN or Inf")
    return np.argsort(row, kind="stable")
