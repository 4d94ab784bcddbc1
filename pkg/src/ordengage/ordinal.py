"""Ordinal decomposition: C−1 binary "is y > c" tasks and their recombination.

The C−1 binary probabilities g_c = P(y > c) telescope into a C-class
distribution:

    p_0 = 1 − g_0,   p_c = g_{c−1} − g_c,   p_{C−1} = g_{C−2}.

Non-monotone member outputs can produce negative masses; those are clamped
to zero and the vector renormalized, with the raw values kept for audit.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import ContractError, ParameterError
from .models import stack_sequences

log = logging.getLogger(__name__)

CLAMP_POLICIES = ("clamp_renormalize",)


def relabel_binary(labels, threshold: int, num_classes: int | None = None) -> np.ndarray:
    """Binary targets t_i = 1 iff y_i > threshold.

    Warns when one side is empty, which makes the binary task degenerate.
    """
    y = np.asarray(labels, dtype=np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1
    if not 0 <= threshold <= c - 2:
        raise ParameterError(
            f"threshold must be in [0, {c - 2}] for {c} classes, got {threshold}"
        )
    t = (y > threshold).astype(np.int64)
    if y.size and (t.min() == t.max()):
        side = "positive" if t[0] == 1 else "negative"
        log.warning(
            "binary task y > %d is degenerate: every sample is on the %s side",
            threshold,
            side,
        )
    return t


def combine_probabilities(g) -> tuple[np.ndarray, np.ndarray]:
    """Telescope C−1 binary probabilities into a C-class distribution.

    Returns (raw, adjusted).  raw always sums to 1; when it has negative
    entries (non-monotone g) the adjusted vector clamps them to zero and
    renormalizes, otherwise adjusted == raw.
    """
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if g.size < 1:
        raise ContractError("need at least one binary probability")
    if np.any(g < 0) or np.any(g > 1):
        raise ContractError(f"binary probabilities must lie in [0, 1], got {g}")
    c = g.size + 1
    raw = np.empty(c, dtype=np.float64)
    raw[0] = 1.0 - g[0]
    raw[1:-1] = g[:-1] - g[1:]
    raw[-1] = g[-1]
    if raw.min() >= 0.0:
        return raw, raw.copy()
    clamped = np.maximum(raw, 0.0)
    adjusted = clamped / clamped.sum()
    return raw, adjusted


class OrdinalEnsemble:
    """C−1 binary pipelines recombined into per-class probabilities.

    Member c must expose ``predict_proba(frames) -> (N,) array`` estimating
    P(y > c); members are indexed by threshold.
    """

    def __init__(self, members, num_classes: int, clamp_policy: str = "clamp_renormalize"):
        members = list(members)
        if num_classes < 2:
            raise ParameterError("ordinal ensembles need at least 2 classes")
        if len(members) != num_classes - 1:
            raise ContractError(
                f"expected {num_classes - 1} members for {num_classes} classes, "
                f"got {len(members)}"
            )
        if clamp_policy not in CLAMP_POLICIES:
            raise ParameterError(f"unknown clamp policy {clamp_policy!r}")
        self.members = members
        self.num_classes = int(num_classes)
        self.clamp_policy = clamp_policy

    def member_probabilities(self, frames_batch: np.ndarray) -> np.ndarray:
        """(N, C−1) matrix of member estimates g_c = P(y > c)."""
        columns = []
        for c, member in enumerate(self.members):
            p = np.asarray(member.predict_proba(frames_batch), dtype=np.float64).reshape(-1)
            if p.shape[0] != frames_batch.shape[0]:
                raise ContractError(
                    f"member {c} returned {p.shape[0]} probabilities for "
                    f"{frames_batch.shape[0]} samples"
                )
            columns.append(p)
        return np.stack(columns, axis=1)

    def predict_batch(self, frames_batch: np.ndarray):
        """Returns (labels, adjusted distributions, diagnostics)."""
        g = self.member_probabilities(frames_batch)
        n = g.shape[0]
        raw = np.empty((n, self.num_classes))
        adjusted = np.empty((n, self.num_classes))
        clamped_rows = 0
        for i in range(n):
            raw[i], adjusted[i] = combine_probabilities(g[i])
            if raw[i].min() < 0:
                clamped_rows += 1
        labels = adjusted.argmax(axis=1)  # argmax takes the lowest index on ties
        diagnostics = {"clamped_samples": clamped_rows, "raw": raw}
        return labels, adjusted, diagnostics


def ordinal_predict(ensemble: OrdinalEnsemble, sequence) -> tuple[int, np.ndarray]:
    """Predict one FeatureSequence; ties break toward the lower class."""
    batch = stack_sequences([sequence])
    labels, adjusted, _ = ensemble.predict_batch(batch)
    return int(labels[0]), adjusted[0]
