"""Measurement instruments: class divergence, false-negative event
frequencies, clustering quality, and a linear probe.

The event vocabulary for frequency counting: every sampled batch is an
A-event; a batch holding at least two items of one class is a B-event; a
batch where some anchor's selected deputy negative shares that anchor's
class is an Omega-event (the over-clustering risk indicator). Omega binds
to the deputy the configured loss variant would actually use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .data import ContrastiveBatch
from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    EmptyClassError,
    EmptySplitError,
    InvalidSpecError,
    NoBatchesError,
    SingleClassError,
)
from .geometry import as_embedding_batch, normalize_rows, pairwise_distance_matrix
from .losses import deputy_ranks

WITHIN_CLASS_STD_FLOOR = 1e-12


@dataclass
class DiagnosticsReport:
    """The metric bundle one experiment run produces."""

    class_divergence: float
    pr_omega_given_a: float
    pr_omega_given_b: Optional[float]
    nmi: float
    ari: float
    probe_accuracy: float
    counts: dict

    def to_dict(self) -> dict:
        return {
            "class_divergence": self.class_divergence,
            "pr_omega_given_a": self.pr_omega_given_a,
            "pr_omega_given_b": self.pr_omega_given_b,
            "nmi": self.nmi,
            "ari": self.ari,
            "probe_accuracy": self.probe_accuracy,
            "counts": dict(self.counts),
        }


def _class_centers(emb: np.ndarray, labels: np.ndarray):
    classes = np.unique(labels)
    centers = np.stack([emb[labels == c].mean(axis=0) for c in classes])
    return classes, centers


def class_divergence(embeddings, labels) -> float:
    """Mean pairwise distance between class centers after spread equalization.

    Embeddings are first divided by the pooled within-class standard
    deviation (RMS of all deviation components, floored at 1e-12 for
    zero-spread input), so runs with different overall scales compare on one
    footing; then class centers are averaged per label and the mean
    Euclidean center-to-center distance over all pairs is returned.
    """
    emb = as_embedding_batch(embeddings)
    labels = np.asarray(labels).ravel()
    if labels.shape[0] != emb.shape[0]:
        raise DimensionMismatchError("one label per embedding row required")
    classes, centers = _class_centers(emb, labels)
    if classes.size < 2:
        raise SingleClassError("class divergence needs at least two classes")
    deviations = emb - centers[np.searchsorted(classes, labels)]
    pooled_std = float(np.sqrt(np.mean(deviations**2)))
    scaled_centers = centers / max(pooled_std, WITHIN_CLASS_STD_FLOOR)
    diff = scaled_centers[:, None, :] - scaled_centers[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    iu = np.triu_indices(classes.size, k=1)
    return float(dist[iu].mean())


@dataclass
class BatchRankRecord:
    """Labels needed to score one batch: per-item labels, per-anchor labels,
    and each anchor's negative labels in ascending-distance order."""

    item_labels: np.ndarray
    anchor_labels: np.ndarray
    ranked_negative_labels: np.ndarray  # num_anchors x m

    def __post_init__(self):
        if self.ranked_negative_labels.ndim != 2:
            raise DimensionMismatchError("ranked_negative_labels must be 2-D")
        if self.anchor_labels.shape[0] != self.ranked_negative_labels.shape[0]:
            raise DimensionMismatchError("one label per anchor required")


def rank_negative_labels(batch: ContrastiveBatch, embeddings) -> BatchRankRecord:
    """Build a rank record from a batch and the embeddings of its views.

    ``embeddings`` must be the encoder output for ``batch.stacked_views()``.
    All 2b views act as anchors; each anchor's negatives are the views of the
    other items, ranked by ascending cosine distance (stable on ties).
    """
    emb = as_embedding_batch(embeddings)
    b = batch.batch_size
    if emb.shape[0] != 2 * b:
        raise DimensionMismatchError("need one embedding per stacked view")
    distances = pairwise_distance_matrix(emb, emb)
    labels = batch.hidden_labels
    ranked = np.empty((2 * b, batch.num_negatives), dtype=np.int64)
    for a in range(2 * b):
        neg_idx = batch.negative_indices(a % b)
        order = np.argsort(distances[a, neg_idx], kind="stable")
        ranked[a] = labels[neg_idx[order] % b]
    return BatchRankRecord(labels, np.tile(labels, 2), ranked)


def single_view_rank_record(embeddings, labels) -> BatchRankRecord:
    """Rank record for a batch of bare embeddings (one view per item).

    Every row is an anchor and the other rows are its negatives (m = n-1),
    which is how external embedding dumps are scored.
    """
    emb = as_embedding_batch(embeddings)
    labels = np.asarray(labels).ravel()
    n = emb.shape[0]
    if labels.shape[0] != n:
        raise DimensionMismatchError("one label per embedding row required")
    if n < 2:
        raise DimensionMismatchError("need at least two rows for negatives")
    distances = pairwise_distance_matrix(emb, emb)
    ranked = np.empty((n, n - 1), dtype=np.int64)
    for a in range(n):
        negs = np.concatenate([np.arange(a), np.arange(a + 1, n)])
        order = np.argsort(distances[a, negs], kind="stable")
        ranked[a] = labels[negs[order]]
    return BatchRankRecord(labels, labels, ranked)


def false_negative_frequencies(records: Sequence[BatchRankRecord], k: int,
                               variant: str = "rank_k"):
    """Frequencies of the Omega event over a batch stream.

    Returns ``(pr_omega_given_a, pr_omega_given_b, counts)`` with counts
    holding batches_total / batches_b / batches_omega. pr_omega_given_b is
    None when no batch had a same-class pair.
    """
    total = b_count = omega_count = omega_and_b = 0
    for record in records:
        total += 1
        _, label_counts = np.unique(record.item_labels, return_counts=True)
        has_pair = bool((label_counts >= 2).any())
        b_count += has_pair
        m = record.ranked_negative_labels.shape[1]
        ranks = np.array(deputy_ranks(m, k, variant)) - 1
        deputies = record.ranked_negative_labels[:, ranks]
        omega = bool((deputies == record.anchor_labels[:, None]).any())
        omega_count += omega
        omega_and_b += omega and has_pair
    if total == 0:
        raise NoBatchesError("no batches to score")
    counts = {
        "batches_total": total,
        "batches_b": b_count,
        "batches_omega": omega_count,
    }
    pr_a = omega_count / total
    pr_b = omega_and_b / b_count if b_count else None
    return pr_a, pr_b, counts


def assignment_agreement(assignment, labels) -> tuple[float, float]:
    """(NMI, ARI) between a cluster assignment and reference labels."""
    return (
        float(normalized_mutual_info_score(labels, assignment)),
        float(adjusted_rand_score(labels, assignment)),
    )


def clustering_quality(embeddings, labels, num_clusters: int,
                       seed: int = 0) -> tuple[float, float]:
    """Seeded k-means on L2-normalized embeddings, scored against labels."""
    emb = as_embedding_batch(embeddings)
    labels = np.asarray(labels).ravel()
    if num_clusters < 2:
        raise InvalidSpecError("num_clusters must be >= 2")
    if emb.shape[0] < num_clusters:
        raise InvalidSpecError("need at least num_clusters points")
    if bool(np.all(emb == emb[0])):
        raise DegenerateInputError("all points identical; clustering undefined")
    normalized = normalize_rows(emb)
    km = KMeans(n_clusters=num_clusters, n_init=10, max_iter=300,
                random_state=seed % (2**32))
    assignment = km.fit_predict(normalized)
    return assignment_agreement(assignment, labels)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(train_emb, train_labels, test_emb, test_labels,
                 epochs: int = 200, lr: float = 1.0) -> float:
    """Top-1 accuracy of a multinomial logistic probe on frozen embeddings.

    Full-batch gradient descent from zero weights: deterministic, no data
    order involved. The encoder never sees these gradients.
    """
    xtr = as_embedding_batch(train_emb)
    xte = as_embedding_batch(test_emb)
    if xtr.shape[1] != xte.shape[1]:
        raise DimensionMismatchError("train/test embedding dims differ")
    ytr = np.asarray(train_labels).ravel()
    yte = np.asarray(test_labels).ravel()
    if xtr.shape[0] == 0 or ytr.shape[0] == 0:
        raise EmptySplitError("empty training split")
    if xte.shape[0] == 0 or yte.shape[0] == 0:
        raise EmptySplitError("empty test split")
    if ytr.shape[0] != xtr.shape[0] or yte.shape[0] != xte.shape[0]:
        raise DimensionMismatchError("one label per embedding row required")
    classes = np.unique(ytr)
    if classes.size < 2:
        raise SingleClassError("probe needs at least two training classes")
    missing = np.setdiff1d(np.unique(yte), classes)
    if missing.size:
        raise EmptyClassError(f"test labels {missing.tolist()} never trained")
    onehot = (ytr[:, None] == classes[None, :]).astype(np.float64)
    w = np.zeros((classes.size, xtr.shape[1]))
    bias = np.zeros(classes.size)
    n = xtr.shape[0]
    for _ in range(epochs):
        probs = _softmax_rows(xtr @ w.T + bias)
        g = (probs - onehot) / n
        w -= lr * (g.T @ xtr)
        bias -= lr * g.sum(axis=0)
    predictions = classes[np.argmax(xte @ w.T + bias, axis=1)]
    return float(np.mean(predictions == yte))
