"""PK batch sampling and the toy gradient-descent trainer."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .triplet import (
    REDUCTION_SUM,
    REDUCTIONS,
    Batch,
    EmbeddingModel,
    batch_hard_loss,
    embed,
    loss_gradient,
)

DEFAULT_P = 18
DEFAULT_K = 4
DEFAULT_MARGIN = 1.0
DEFAULT_LEARNING_RATE = 2e-4
DEFAULT_EPOCHS = 300


@dataclass
class TrainConfig:
    p: int = DEFAULT_P
    k: int = DEFAULT_K
    margin: float = DEFAULT_MARGIN
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    dim_out: int | None = None
    normalize_output: bool = False
    reduction: str = REDUCTION_SUM

    def validate(self) -> None:
        if self.p < 2:
            raise ValueError("p must be >= 2 (a negative identity must exist)")
        if self.k < 2:
            raise ValueError("k must be >= 2 (a positive image must exist)")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        # 0 is allowed so a run can be checked against its initialization.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dim_out is not None and self.dim_out < 1:
            raise ValueError("dim_out must be >= 1")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")

    @property
    def batch_size(self) -> int:
        return self.p * self.k


def sample_pk_batch(inputs, identities, p: int, k: int, rng: np.random.Generator) -> Batch:
    """Draw P identities, then K images per identity.

    Identities are drawn without replacement; images are drawn without
    replacement when an identity has at least K images and with
    replacement otherwise. Deterministic for a given generator state.
    """
    x = np.asarray(inputs, dtype=np.float64)
    ids = np.asarray(identities, dtype=np.int64)
    unique = np.unique(ids)
    if len(unique) < p:
        raise ValueError(f"need at least {p} identities, manifest has {len(unique)}")
    chosen = rng.choice(unique, size=p, replace=False)
    rows: list[int] = []
    for identity in chosen:
        pool = np.flatnonzero(ids == identity)
        if len(pool) >= k:
            picked = rng.choice(pool, size=k, replace=False)
        else:
            picked = pool[rng.integers(0, len(pool), size=k)]
        rows.extend(int(r) for r in picked)
    return Batch(x[rows], ids[rows])


@dataclass
class TrainResult:
    model: EmbeddingModel
    epoch_losses: list[float] = field(default_factory=list)


def init_weights(dim_in: int, dim_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(dim_in)
    return rng.uniform(-bound, bound, size=(dim_in, dim_out))


def train_toy(inputs, identities, config: TrainConfig) -> TrainResult:
    """Plain gradient descent on the batch-hard loss; bit-reproducible per seed."""
    config.validate()
    x = np.asarray(inputs, dtype=np.float64)
    ids = np.asarray(identities, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != ids.shape[0]:
        raise ValueError("inputs must be (n, d) with one identity per row")
    rng = np.random.default_rng(config.seed)
    dim_out = config.dim_out if config.dim_out is not None else x.shape[1]
    model = EmbeddingModel(init_weights(x.shape[1], dim_out, rng), config.normalize_output)
    steps = max(1, x.shape[0] // config.batch_size)
    losses: list[float] = []
    for _ in range(config.epochs):
        total = 0.0
        for _ in range(steps):
            batch = sample_pk_batch(x, ids, config.p, config.k, rng)
            loss, _ = batch_hard_loss(
                embed(model, batch.inputs), batch.labels, config.margin, config.reduction
            )
            grad = loss_gradient(model, batch, config.margin, config.reduction)
            model.weights = model.weights - config.learning_rate * grad
            total += loss
        losses.append(total / steps)
    return TrainResult(model, losses)


def save_model(path, model: EmbeddingModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, weights=model.weights, normalize_output=np.bool_(model.normalize_output))


def load_model(path) -> EmbeddingModel:
    with np.load(path) as data:
        return EmbeddingModel(data["weights"], bool(data["normalize_output"]))
