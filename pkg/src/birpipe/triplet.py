"""Batch-hard triplet loss over a toy linear embedding.

For every anchor in a P-identities x K-images batch the hardest positive
(largest same-identity distance) and hardest negative (smallest
other-identity distance) are selected, and the loss is the sum over all
P*K anchors of the hinge

    [ d(anchor, hardest positive) - d(anchor, hardest negative) + margin ]+

Distances are non-squared Euclidean. The hinge subgradient at exactly
zero is taken as zero, and argmax/argmin ties resolve to the lowest
index, which keeps the analytic gradient well-defined and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REDUCTION_SUM = "sum"
REDUCTION_MEAN = "mean"
REDUCTIONS = (REDUCTION_SUM, REDUCTION_MEAN)


@dataclass
class EmbeddingModel:
    """Linear map realized by a (d_in, d_out) weight matrix.

    With `normalize_output` the embedding is scaled to unit Euclidean
    norm (zero vectors stay zero).
    """

    weights: np.ndarray
    normalize_output: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ValueError(f"weights must be a 2-D matrix, got shape {self.weights.shape}")
        if not np.isfinite(self.weights).all():
            raise ValueError("weights must be finite")

    @property
    def dim_in(self) -> int:
        return self.weights.shape[0]

    @property
    def dim_out(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Batch:
    """P*K inputs with exactly P distinct labels, each appearing K times."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs must be (n, d) with one label per row")
        counts = np.unique(labels, return_counts=True)[1]
        if len(counts) < 2 or len(set(counts.tolist())) != 1:
            raise ValueError("batch needs >= 2 identities with equal image counts")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def num_identities(self) -> int:
        return len(np.unique(self.labels))

    @property
    def images_per_identity(self) -> int:
        return self.labels.shape[0] // self.num_identities


def embed(model: EmbeddingModel, inputs) -> np.ndarray:
    """Map one vector or a stack of vectors through the model."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim > 2:
        raise ValueError(f"inputs must be a vector or a (n, d) stack, got shape {x.shape}")
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != model.dim_in:
        raise ValueError(f"input dimension {x2.shape[1]} != model dim_in {model.dim_in}")
    y = x2 @ model.weights
    if model.normalize_output:
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        y = y / np.where(norms == 0.0, 1.0, norms)
    return y[0] if single else y


def pairwise_distances(features) -> np.ndarray:
    """Symmetric matrix of non-squared Euclidean distances, zero diagonal."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"features must be a (n, d) array, got shape {f.shape}")
    diff = f[:, None, :] - f[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _hardest_indices(distances: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    n = labels.shape[0]
    unique, counts = np.unique(labels, return_counts=True)
    if counts.min() < 2:
        raise ValueError("every label needs at least 2 occurrences")
    if len(unique) < 2:
        raise ValueError("at least 2 distinct labels are required")
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(n, dtype=bool)
    # np.argmax/argmin return the first extremum, i.e. the lowest index on ties.
    pos_idx = np.where(positive, distances, -np.inf).argmax(axis=1)
    neg_idx = np.where(~same, distances, np.inf).argmin(axis=1)
    return pos_idx, neg_idx


def batch_hard_loss(
    features,
    labels,
    margin: float,
    reduction: str = REDUCTION_SUM,
) -> tuple[float, list[tuple[int, int]]]:
    """Batch-hard hinge loss plus the (positive, negative) index per anchor.

    The default reduction is the plain sum over anchors; "mean" divides
    by the batch size for learning-rate comparability.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    f = np.asarray(features, dtype=np.float64)
    distances = pairwise_distances(f)
    pos_idx, neg_idx = _hardest_indices(distances, labels)
    anchors = np.arange(f.shape[0])
    hinges = np.maximum(distances[anchors, pos_idx] - distances[anchors, neg_idx] + margin, 0.0)
    loss = float(hinges.sum())
    if reduction == REDUCTION_MEAN:
        loss /= f.shape[0]
    return loss, list(zip(pos_idx.tolist(), neg_idx.tolist()))


def loss_gradient(
    model: EmbeddingModel,
    batch: Batch,
    margin: float,
    reduction: str = REDUCTION_SUM,
) -> np.ndarray:
    """Analytic gradient of batch_hard_loss(embed(inputs)) w.r.t. the weights.

    Inactive hinges contribute nothing; coincident feature pairs
    (distance zero) take the zero subgradient.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    x = batch.inputs
    if x.shape[1] != model.dim_in:
        raise ValueError(f"batch dimension {x.shape[1]} != model dim_in {model.dim_in}")
    y = x @ model.weights
    if model.normalize_output:
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        f = y / np.where(norms == 0.0, 1.0, norms)
    else:
        f = y
    distances = pairwise_distances(f)
    pos_idx, neg_idx = _hardest_indices(distances, batch.labels)

    n = f.shape[0]
    d_features = np.zeros_like(f)
    for anchor in range(n):
        p = pos_idx[anchor]
        q = neg_idx[anchor]
        hinge = distances[anchor, p] - distances[anchor, q] + margin
        if hinge <= 0.0:
            continue
        if distances[anchor, p] > 0.0:
            unit = (f[anchor] - f[p]) / distances[anchor, p]
            d_features[anchor] += unit
            d_features[p] -= unit
        if distances[anchor, q] > 0.0:
            unit = (f[anchor] - f[q]) / distances[anchor, q]
            d_features[anchor] -= unit
            d_features[q] += unit
    if reduction == REDUCTION_MEAN:
        d_features /= n

    if model.normalize_output:
        # f = y / |y|; pull d_features back through the normalization.
        raw_norms = np.linalg.norm(y, axis=1, keepdims=True)
        safe = np.where(raw_norms == 0.0, 1.0, raw_norms)
        inner = np.sum(f * d_features, axis=1, keepdims=True)
        d_y = (d_features - inner * f) / safe
        d_y[raw_norms[:, 0] == 0.0] = 0.0
    else:
        d_y = d_features
    return x.T @ d_y
