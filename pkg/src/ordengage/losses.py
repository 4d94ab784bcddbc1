"""Training losses: supervised contrastive, (weighted) cross-entropy, BCE.

All losses are compositions of diffcore primitives, so their gradients are
covered by the finite-difference checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    Tensor,
    add,
    log_softmax,
    masked_logsumexp_rows,
    matmul,
    reshape,
    scale,
    softplus,
    take_per_row,
    transpose,
    weighted_sum,
)
from .errors import ContractError, ParameterError


def supcon_loss(z: Tensor, labels, temperature: float = 0.1) -> tuple[Tensor, dict]:
    """Supervised contrastive loss over a batch of unit-norm rows.

    For each anchor i with positive set P(i) (same-label batch mates) and
    candidate set A(i) (everyone but i):

        L = Σ_i (−1/|P(i)|) Σ_{p∈P(i)} log exp(z_i·z_p/τ) / Σ_{a∈A(i)} exp(z_i·z_a/τ)

    Anchors without any positive contribute zero and are reported in the
    diagnostics dict.  Self-similarity never enters the denominator.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if z.data.ndim != 2:
        raise ContractError(f"embeddings must be (N, K), got {z.data.shape}")
    n = z.data.shape[0]
    if n < 2:
        raise ContractError(f"contrastive batch needs N >= 2, got {n}")
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != n:
        raise ContractError(f"{y.shape[0]} labels for {n} embeddings")

    sim = scale(matmul(z, transpose(z)), 1.0 / temperature)
    off_diag = 1.0 - np.eye(n)
    positives = (y[:, None] == y[None, :]).astype(np.float64) * off_diag
    pos_counts = positives.sum(axis=1)
    has_pos = pos_counts > 0

    # L = −Σ_{i,p} sim_ip/|P(i)| + Σ_{i: |P(i)|>0} logΣ_{a≠i} exp(sim_ia)
    pos_weights = np.divide(
        positives, pos_counts[:, None], out=np.zeros_like(positives), where=has_pos[:, None]
    )
    lse = masked_logsumexp_rows(sim, off_diag)
    loss = add(
        weighted_sum(sim, -pos_weights),
        weighted_sum(lse, has_pos.astype(np.float64)),
    )
    diagnostics = {
        "batch_size": n,
        "anchors_without_positives": int(n - has_pos.sum()),
    }
    return loss, diagnostics


@dataclass(frozen=True)
class ClassWeights:
    """Per-class positive weights normalized to mean 1."""

    values: tuple[float, ...]

    def __post_init__(self):
        if any(v <= 0 for v in self.values):
            raise ParameterError("class weights must be positive")

    def per_sample(self, labels) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)[np.asarray(labels)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def compute_class_weights(counts) -> ClassWeights:
    """Weights inversely proportional to class frequency, mean-normalized.

    raw_c = total/(C·count_c); the returned weights are raw / mean(raw) so a
    weighted run keeps the same overall loss scale as an unweighted one.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        empty = [int(i) for i in np.flatnonzero(counts <= 0)]
        raise ContractError(
            f"classes {empty} have no samples; merge them or oversample before "
            f"computing inverse-frequency weights"
        )
    raw = counts.sum() / (len(counts) * counts)
    normalized = raw / raw.mean()
    return ClassWeights(tuple(float(v) for v in normalized))


def cross_entropy(logits: Tensor, labels, weights: ClassWeights | None = None) -> Tensor:
    """Mean over samples of w_y·(−log softmax(logits)[y]), via log-softmax."""
    if logits.data.ndim != 2:
        raise ContractError(f"logits must be (N, C), got {logits.data.shape}")
    n, c = logits.data.shape
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != n:
        raise ContractError(f"{y.shape[0]} labels for {n} rows of logits")
    if y.min() < 0 or y.max() >= c:
        raise ContractError(f"label out of range [0, {c})")
    w = weights.per_sample(y) if weights is not None else np.ones(n)
    log_probs = take_per_row(log_softmax(logits), y)
    return weighted_sum(log_probs, -w / n)


def binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean BCE on raw logits, computed in the overflow-free softplus form.

    Uses −[t·log σ(ℓ) + (1−t)·log(1−σ(ℓ))] = softplus(ℓ) − ℓ·t for t ∈ {0,1}.
    """
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if not np.all(np.isin(t, (0.0, 1.0))):
        raise ContractError("binary targets must be 0 or 1")
    flat = reshape(logits, (logits.data.size,))
    if flat.data.shape[0] != t.shape[0]:
        raise ContractError(f"{t.shape[0]} targets for {flat.data.shape[0]} logits")
    if not np.all(np.isfinite(flat.data)):
        raise ContractError("non-finite logit")
    n = t.shape[0]
    return add(
        weighted_sum(softplus(flat), np.full(n, 1.0 / n)),
        weighted_sum(flat, -t / n),
    )
