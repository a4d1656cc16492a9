"""Contrastive loss family with analytic gradients.

Four variants over one anchor / one positive / m negatives:

* ``hardest``          max(d(x, x+) - min_i d(x, xi-), C)
* ``rank_k``           max(gamma * d(x, x+) - d_deputy, C), deputy = k-th
                       smallest negative distance (1-indexed)
* ``smoothed_rank_k``  same hinge, deputy = mean of the distances at ranks
                       2..min(2k+1, m)
* ``infonce``          softmax cross-entropy over similarities at
                       temperature tau
* ``positive_only``    just d(x, x+); a no-negative baseline

Distances are cosine distances of the raw embeddings; gradients are taken
with respect to the raw (unnormalized) vectors, propagating through the
normalization. Rank selection is treated as constant under differentiation
(the usual subgradient for hard-mining losses), so only the negatives that
actually contribute to the deputy receive gradient. A hinge that clips at
the margin zeroes every gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyNegativesError,
    KOutOfRangeError,
    OutOfRangeError,
)
from .geometry import ascending_sort_indices, normalize_rows, l2_normalize

TRIPLET_VARIANTS = ("hardest", "rank_k", "smoothed_rank_k")
VARIANTS = TRIPLET_VARIANTS + ("infonce", "positive_only")


@dataclass
class ContrastiveView:
    """One anchor with its positive and negative embeddings (raw, nonzero)."""

    anchor: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray  # m x d

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        self.positive = np.asarray(self.positive, dtype=np.float64)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.negatives.ndim != 2:
            raise DimensionMismatchError("negatives must be an m x d matrix")
        d = self.anchor.shape[-1]
        if self.anchor.ndim != 1 or self.positive.shape != (d,) or self.negatives.shape[1] != d:
            raise DimensionMismatchError(
                "anchor, positive, negatives disagree on embedding dimension"
            )

    @property
    def num_negatives(self) -> int:
        return self.negatives.shape[0]


@dataclass(frozen=True)
class LossConfig:
    """Variant selector plus the loss hyperparameters.

    ``gamma`` scales the positive distance in the truncated variants only;
    ``apply_gamma_to_hardest`` forces it into the hardest variant for
    ablations. ``margin`` is the hinge floor (default -100, effectively
    inert). ``k`` is the deputy rank; ``temperature`` drives infonce.
    """

    variant: str = "rank_k"
    gamma: float = 2.0
    margin: float = -100.0
    k: int = 1
    temperature: float = 0.2
    symmetric: bool = True
    apply_gamma_to_hardest: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise OutOfRangeError(f"unknown loss variant {self.variant!r}")
        if not self.gamma > 0:
            raise OutOfRangeError("gamma must be positive")
        if not self.temperature > 0:
            raise OutOfRangeError("temperature must be positive")
        if not np.isfinite(self.margin):
            raise OutOfRangeError("margin must be finite")
        if self.k < 1:
            raise KOutOfRangeError("k must be >= 1")


@dataclass
class LossResult:
    """Scalar loss plus gradients with respect to every raw input embedding."""

    value: float
    grad_anchor: np.ndarray
    grad_positive: np.ndarray
    grad_negatives: np.ndarray

    def scaled(self, factor: float) -> "LossResult":
        return LossResult(
            self.value * factor,
            self.grad_anchor * factor,
            self.grad_positive * factor,
            self.grad_negatives * factor,
        )


def deputy_ranks(m: int, k: int, variant: str) -> tuple[int, ...]:
    """1-indexed ranks that form the deputy for a given variant.

    rank_k uses {k}; smoothed_rank_k uses 2..min(2k+1, m), clamped to the
    available negatives. The clamped set is empty only at m == 1, where the
    single negative stands in. hardest is rank 1.
    """
    if m < 1:
        raise EmptyNegativesError("need at least one negative")
    if variant == "hardest":
        return (1,)
    if not 1 <= k <= m:
        raise KOutOfRangeError(f"k={k} outside 1..{m}")
    if variant == "rank_k":
        return (k,)
    if variant == "smoothed_rank_k":
        ranks = tuple(range(2, min(2 * k + 1, m) + 1))
        return ranks if ranks else (1,)
    raise OutOfRangeError(f"variant {variant!r} has no deputy")


def select_deputy_distance(sorted_distances, k: int, variant: str):
    """Deputy distance and contributing ranks from an ascending distance row.

    Returns ``(deputy_distance, contributing_ranks)``; for the smoothed
    variant the deputy is the mean over the contributing ranks and the
    divisor is the size of the (clamped) rank set.
    """
    sorted_distances = np.asarray(sorted_distances, dtype=np.float64)
    m = sorted_distances.shape[0]
    ranks = deputy_ranks(m, k, variant)
    picks = sorted_distances[[r - 1 for r in ranks]]
    return float(picks.mean()), ranks


@dataclass
class _Prepared:
    """Normalized view with the pieces the gradient formulas need."""

    u: np.ndarray        # unit anchor
    v: np.ndarray        # unit positive
    vn: np.ndarray       # unit negatives, m x d
    na: float
    npos: float
    nneg: np.ndarray     # m row norms
    s_pos: float         # cos sim anchor/positive
    s_neg: np.ndarray    # cos sims anchor/negatives


def _prepare(view: ContrastiveView) -> _Prepared:
    na = float(np.linalg.norm(view.anchor))
    npos = float(np.linalg.norm(view.positive))
    u = l2_normalize(view.anchor)
    v = l2_normalize(view.positive)
    nneg = np.linalg.norm(view.negatives, axis=1)
    vn = normalize_rows(view.negatives, side="negatives")
    s_pos = float(u @ v)
    s_neg = vn @ u
    return _Prepared(u, v, vn, na, npos, nneg, s_pos, s_neg)


# d = -s, so grad_x d(x, y) = (s*u - v)/|x| and grad_y d(x, y) = (s*v - u)/|y|.


def _zero_result(view: ContrastiveView, value: float) -> LossResult:
    return LossResult(
        value,
        np.zeros_like(view.anchor),
        np.zeros_like(view.positive),
        np.zeros_like(view.negatives),
    )


def _hinge_triplet(view: ContrastiveView, pre: _Prepared, gamma: float,
                   margin: float, ranks: tuple[int, ...],
                   order: np.ndarray) -> LossResult:
    """Shared hinge/gradient assembly for the triplet variants."""
    d_pos = -pre.s_pos
    d_neg = -pre.s_neg
    weight = 1.0 / len(ranks)
    idx = order[[r - 1 for r in ranks]]
    deputy = float(d_neg[idx].mean())
    value = gamma * d_pos - deputy
    if value < margin:
        return _zero_result(view, margin)
    grad_anchor = gamma * (pre.s_pos * pre.u - pre.v) / pre.na
    grad_positive = gamma * (pre.s_pos * pre.v - pre.u) / pre.npos
    grad_negatives = np.zeros_like(view.negatives)
    for i in idx:
        # minus the deputy term: -(1/|R|) * grad d(x, x_i-)
        grad_anchor -= weight * (pre.s_neg[i] * pre.u - pre.vn[i]) / pre.na
        grad_negatives[i] = -weight * (pre.s_neg[i] * pre.vn[i] - pre.u) / pre.nneg[i]
    return LossResult(value, grad_anchor, grad_positive, grad_negatives)


def hardest_triplet_loss(view: ContrastiveView, cfg: LossConfig) -> LossResult:
    """Classic hinge against the single closest negative.

    ``max(d(x, x+) - d(x, x_hardest-), margin)``; gamma enters only when
    ``cfg.apply_gamma_to_hardest`` is set.
    """
    if view.num_negatives < 1:
        raise EmptyNegativesError("hardest_triplet_loss needs m >= 1")
    pre = _prepare(view)
    hardest = int(np.argmin(-pre.s_neg))  # first minimum on ties
    gamma = cfg.gamma if cfg.apply_gamma_to_hardest else 1.0
    # argmin == stable-sort rank 1, so reuse the hinge assembly with a
    # one-element "order" holding the winner.
    order = np.array([hardest])
    return _hinge_triplet(view, pre, gamma, cfg.margin, (1,), order)


def truncated_triplet_loss(view: ContrastiveView, cfg: LossConfig) -> LossResult:
    """Hinge against a rank-selected negative deputy instead of the hardest.

    rank_k picks the k-th smallest distance; smoothed_rank_k averages ranks
    2..min(2k+1, m), each contributing negative receiving 1/|ranks| of the
    deputy gradient.
    """
    if view.num_negatives < 1:
        raise EmptyNegativesError("truncated_triplet_loss needs m >= 1")
    variant = cfg.variant if cfg.variant in ("rank_k", "smoothed_rank_k") else "rank_k"
    ranks = deputy_ranks(view.num_negatives, cfg.k, variant)
    pre = _prepare(view)
    order = ascending_sort_indices(-pre.s_neg)
    return _hinge_triplet(view, pre, cfg.gamma, cfg.margin, ranks, order)


def infonce_from_similarities(s_pos: float, s_neg, temperature: float) -> float:
    """Softmax cross-entropy value from raw cosine similarities.

    Computed with max-subtraction so large 1/temperature never overflows.
    """
    if not temperature > 0:
        raise OutOfRangeError("temperature must be positive")
    logits = np.concatenate(([s_pos], np.asarray(s_neg, dtype=np.float64))) / temperature
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[0])


def infonce_loss(view: ContrastiveView, cfg: LossConfig) -> LossResult:
    """InfoNCE over the positive and all negatives; gradients reach everyone."""
    if view.num_negatives < 1:
        raise EmptyNegativesError("infonce_loss needs m >= 1")
    pre = _prepare(view)
    tau = cfg.temperature
    logits = np.concatenate(([pre.s_pos], pre.s_neg)) / tau
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    softmax = exp / exp.sum()
    value = float(np.log(exp.sum()) - shifted[0])
    # dL/ds+ = (p0 - 1)/tau, dL/dsj- = pj/tau, then chain through cosine.
    c_pos = (softmax[0] - 1.0) / tau
    c_neg = softmax[1:] / tau
    grad_anchor = c_pos * (pre.v - pre.s_pos * pre.u) / pre.na
    grad_anchor += (c_neg[:, None] * (pre.vn - pre.s_neg[:, None] * pre.u)).sum(0) / pre.na
    grad_positive = c_pos * (pre.u - pre.s_pos * pre.v) / pre.npos
    grad_negatives = (
        c_neg[:, None] * (pre.u - pre.s_neg[:, None] * pre.vn) / pre.nneg[:, None]
    )
    return LossResult(value, grad_anchor, grad_positive, grad_negatives)


def positive_only_loss(view: ContrastiveView, cfg: LossConfig) -> LossResult:
    """Cosine distance of the positive pair alone (no-negative baseline)."""
    pre = _prepare(view)
    value = -pre.s_pos
    grad_anchor = (pre.s_pos * pre.u - pre.v) / pre.na
    grad_positive = (pre.s_pos * pre.v - pre.u) / pre.npos
    return LossResult(value, grad_anchor, grad_positive, np.zeros_like(view.negatives))


_DISPATCH = {
    "hardest": hardest_triplet_loss,
    "rank_k": truncated_triplet_loss,
    "smoothed_rank_k": truncated_triplet_loss,
    "infonce": infonce_loss,
    "positive_only": positive_only_loss,
}


def evaluate_view(view: ContrastiveView, cfg: LossConfig) -> LossResult:
    """Evaluate the variant selected by the config on one view."""
    return _DISPATCH[cfg.variant](view, cfg)


def symmetric_loss(loss_op, view_ab: ContrastiveView, view_ba: ContrastiveView,
                   cfg: LossConfig) -> LossResult:
    """Average a loss over both directions of a positive pair.

    ``view_ba`` must be ``view_ab`` with anchor and positive swapped and the
    same negatives matrix. The returned gradients are stated in ``view_ab``'s
    roles and merge both directions by underlying vector: the anchor appears
    as the positive of the swapped view, so its gradient averages
    ``ab.grad_anchor`` with ``ba.grad_positive`` (and vice versa).
    """
    if not (
        np.array_equal(view_ab.anchor, view_ba.positive)
        and np.array_equal(view_ab.positive, view_ba.anchor)
    ):
        raise DimensionMismatchError(
            "view_ba must be view_ab with anchor and positive swapped"
        )
    if not np.array_equal(view_ab.negatives, view_ba.negatives):
        raise DimensionMismatchError(
            "symmetric_loss expects one shared negatives matrix; evaluate the "
            "directions separately when the negative sets differ"
        )
    r_ab = loss_op(view_ab, cfg)
    r_ba = loss_op(view_ba, cfg)
    return LossResult(
        0.5 * (r_ab.value + r_ba.value),
        0.5 * (r_ab.grad_anchor + r_ba.grad_positive),
        0.5 * (r_ab.grad_positive + r_ba.grad_anchor),
        0.5 * (r_ab.grad_negatives + r_ba.grad_negatives),
    )
