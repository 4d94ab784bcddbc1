"""Primitive differentiable operations.

Each function computes a forward value eagerly with numpy and registers an
analytic backward rule on the active tape.  Backward rules receive the
upstream gradient ``g`` and an accumulator ``acc(tensor, grad)``; they skip
inputs through which no gradient can flow.
"""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ContractError, ParameterError, ShapeError
from .tensor import Tensor, record

log = logging.getLogger(__name__)

__all__ = [
    "add", "sub", "neg", "mul", "scale", "matmul", "transpose", "reshape",
    "narrow", "concat", "sigmoid", "tanh", "relu", "softplus", "softmax",
    "log_softmax", "activation", "tsum", "tmean", "mean_axis", "weighted_sum",
    "masked_logsumexp_rows", "take_per_row", "l2_normalize_rows", "dropout",
    "conv1d_causal",
]


def _wants(t: Tensor) -> bool:
    return t.requires_grad or t._needs_grad


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bw(g, acc):
        if _wants(a):
            acc(a, _unbroadcast(g, a.data.shape))
        if _wants(b):
            acc(b, _unbroadcast(g, b.data.shape))

    record(out, (a, b), bw, "add")
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bw(g, acc):
        if _wants(a):
            acc(a, _unbroadcast(g, a.data.shape))
        if _wants(b):
            acc(b, _unbroadcast(-g, b.data.shape))

    record(out, (a, b), bw, "sub")
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)

    def bw(g, acc):
        if _wants(a):
            acc(a, -g)

    record(out, (a,), bw, "neg")
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bw(g, acc):
        if _wants(a):
            acc(a, _unbroadcast(g * b.data, a.data.shape))
        if _wants(b):
            acc(b, _unbroadcast(g * a.data, b.data.shape))

    record(out, (a, b), bw, "mul")
    return out


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    out = Tensor(a.data * k)

    def bw(g, acc):
        if _wants(a):
            acc(a, g * k)

    record(out, (a,), bw, "scale")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors; dA = g·Bᵀ, dB = Aᵀ·g."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def bw(g, acc):
        if _wants(a):
            acc(a, g @ b.data.T)
        if _wants(b):
            acc(b, a.data.T @ g)

    record(out, (a, b), bw, "matmul")
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out = Tensor(np.transpose(a.data, axes))
    if axes is None:
        inverse = None
    else:
        inverse = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))

    def bw(g, acc):
        if _wants(a):
            acc(a, np.transpose(g, inverse))

    record(out, (a,), bw, "transpose")
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in (shape if hasattr(shape, "__iter__") else (shape,)))
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.data.shape} into {shape}")
    out = Tensor(a.data.reshape(shape))

    def bw(g, acc):
        if _wants(a):
            acc(a, g.reshape(a.data.shape))

    record(out, (a,), bw, "reshape")
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along ``axis``."""
    dim = a.data.shape[axis]
    if start < 0 or length < 1 or start + length > dim:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} of size {dim}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.data[index])

    def bw(g, acc):
        if _wants(a):
            full = np.zeros_like(a.data)
            full[index] = g
            acc(a, full)

    record(out, (a,), bw, "narrow")
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of zero tensors")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g, acc):
        offset = 0
        for t, size in zip(tensors, sizes):
            if _wants(t):
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                acc(t, g[tuple(index)])
            offset += size

    record(out, tuple(tensors), bw, "concat")
    return out


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def _sigmoid(x: np.ndarray) -> np.ndarray:
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    out = Tensor(y)

    def bw(g, acc):
        if _wants(a):
            acc(a, g * y * (1.0 - y))

    record(out, (a,), bw, "sigmoid")
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def bw(g, acc):
        if _wants(a):
            acc(a, g * (1.0 - y * y))

    record(out, (a,), bw, "tanh")
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0

    def bw(g, acc):
        if _wants(a):
            acc(a, g * mask)

    record(out, (a,), bw, "relu")
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated as max(x, 0) + log1p(exp(-|x|)) for stability."""
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    out = Tensor(y)

    def bw(g, acc):
        if _wants(a):
            acc(a, g * _sigmoid(x))

    record(out, (a,), bw, "softplus")
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bw(g, acc):
        if _wants(a):
            inner = (g * y).sum(axis=-1, keepdims=True)
            acc(a, y * (g - inner))

    record(out, (a,), bw, "softmax")
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis (computed via a shifted logsumexp)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)
    out = Tensor(y)

    def bw(g, acc):
        if _wants(a):
            acc(a, g - sm * g.sum(axis=-1, keepdims=True))

    record(out, (a,), bw, "log_softmax")
    return out


_ACTIVATIONS = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "log_softmax": log_softmax,
}


def activation(a: Tensor, kind: str) -> Tensor:
    """Dispatch to a named activation; softmax kinds act over the last axis."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ParameterError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(a)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bw(g, acc):
        if _wants(a):
            acc(a, np.full_like(a.data, float(g)))

    record(out, (a,), bw, "sum")
    return out


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())

    def bw(g, acc):
        if _wants(a):
            acc(a, np.full_like(a.data, float(g) / n))

    record(out, (a,), bw, "mean")
    return out


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis))

    def bw(g, acc):
        if _wants(a):
            acc(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    record(out, (a,), bw, "mean_axis")
    return out


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ⟨a, weights⟩ with a constant weight array of matching shape."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != a.data.shape:
        raise ShapeError(f"weights shape {w.shape} != tensor shape {a.data.shape}")
    out = Tensor((a.data * w).sum())

    def bw(g, acc):
        if _wants(a):
            acc(a, float(g) * w)

    record(out, (a,), bw, "weighted_sum")
    return out


def masked_logsumexp_rows(a: Tensor, mask: np.ndarray) -> Tensor:
    """Per-row log Σ_j mask_ij·exp(a_ij) for a constant 0/1 mask.

    Every row must select at least one entry.  Numerically stabilized by a
    per-row max over the selected entries.
    """
    if a.data.ndim != 2:
        raise ShapeError("masked_logsumexp_rows expects a 2-D tensor")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != a.data.shape:
        raise ShapeError(f"mask shape {m.shape} != tensor shape {a.data.shape}")
    if np.any(m.sum(axis=1) < 1):
        raise ContractError("masked_logsumexp_rows: a row selects no entries")
    neg = np.where(m > 0, a.data, -np.inf)
    rowmax = neg.max(axis=1, keepdims=True)
    ex = np.where(m > 0, np.exp(a.data - rowmax), 0.0)
    denom = ex.sum(axis=1, keepdims=True)
    lse = (rowmax + np.log(denom)).reshape(-1)
    out = Tensor(lse)
    soft = ex / denom  # masked softmax rows; zeros outside the mask

    def bw(g, acc):
        if _wants(a):
            acc(a, soft * g.reshape(-1, 1))

    record(out, (a,), bw, "masked_logsumexp_rows")
    return out


def take_per_row(a: Tensor, indices) -> Tensor:
    """Vector of a[i, indices[i]]; backward scatters into the picked cells."""
    if a.data.ndim != 2:
        raise ShapeError("take_per_row expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.intp)
    n, c = a.data.shape
    if idx.shape != (n,):
        raise ShapeError(f"indices shape {idx.shape} != ({n},)")
    if idx.min() < 0 or idx.max() >= c:
        raise ContractError(f"take_per_row index out of range [0, {c})")
    rows = np.arange(n)
    out = Tensor(a.data[rows, idx])

    def bw(g, acc):
        if _wants(a):
            full = np.zeros_like(a.data)
            full[rows, idx] = g
            acc(a, full)

    record(out, (a,), bw, "take_per_row")
    return out


# ---------------------------------------------------------------------------
# specialty ops


def l2_normalize_rows(a: Tensor, tiny: float = 1e-12) -> Tensor:
    """Scale each row of a 2-D tensor onto the unit sphere.

    Rows with norm below ``tiny`` are replaced by the first basis vector (and
    logged); those rows get zero gradient.
    """
    if a.data.ndim != 2:
        raise ShapeError("l2_normalize_rows expects a 2-D tensor")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    degenerate = norms[:, 0] < tiny
    safe = np.where(degenerate[:, None], 1.0, norms)
    y = a.data / safe
    if degenerate.any():
        log.warning(
            "l2_normalize_rows: %d zero-norm row(s) mapped to the first basis vector",
            int(degenerate.sum()),
        )
        y = y.copy()
        y[degenerate] = 0.0
        y[degenerate, 0] = 1.0
    out = Tensor(y)

    def bw(g, acc):
        if _wants(a):
            inner = (g * y).sum(axis=1, keepdims=True)
            grad = (g - inner * y) / safe
            if degenerate.any():
                grad[degenerate] = 0.0
            acc(a, grad)

    record(out, (a,), bw, "l2_normalize_rows")
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep with probability 1−rate, rescale by 1/(1−rate)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * keep)

    def bw(g, acc):
        if _wants(a):
            acc(a, g * keep)

    record(out, (a,), bw, "dropout")
    return out


def conv1d_causal(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """Dilated causal 1-D convolution.

    ``x`` is (C_in, T) or batched (N, C_in, T); ``w`` is (C_out, C_in, K).
    Output length equals input length via left zero-padding of (K−1)·dilation,
    and y[..., t] = Σ_{c,k} w[·, c, k] · x[c, t − k·dilation] so the output at
    time t never sees inputs after t.
    """
    if dilation < 1:
        raise ParameterError(f"dilation must be >= 1, got {dilation}")
    if w.data.ndim != 3:
        raise ShapeError(f"kernel must be (C_out, C_in, K), got {w.data.shape}")
    single = x.data.ndim == 2
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"input must be (C_in, T) or (N, C_in, T), got {x.data.shape}")
    xd = x.data[None] if single else x.data
    n, cin, t = xd.shape
    cout, win, k = w.data.shape
    if k < 1:
        raise ParameterError("kernel width must be >= 1")
    if win != cin:
        raise ShapeError(f"kernel expects {win} input channels, input has {cin}")

    pad = (k - 1) * dilation
    xp = np.zeros((n, cin, t + pad), dtype=np.float64)
    xp[:, :, pad:] = xd
    s = xp.strides
    # windows[n, c, t, k] = xp[n, c, t + k*dilation]
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(n, cin, t, k), strides=(s[0], s[1], s[2], s[2] * dilation)
    )
    wrev = w.data[:, :, ::-1]
    y = np.tensordot(windows, wrev, axes=([1, 3], [1, 2]))  # (n, t, cout)
    y = np.ascontiguousarray(np.swapaxes(y, 1, 2))
    out = Tensor(y[0] if single else y)

    def bw(g, acc):
        gd = g[None] if single else g  # (n, cout, t)
        if _wants(w):
            dwrev = np.tensordot(gd, windows, axes=([0, 2], [0, 2]))  # (cout, cin, k)
            acc(w, np.ascontiguousarray(dwrev[:, :, ::-1]))
        if _wants(x):
            dxp = np.zeros_like(xp)
            for kk in range(k):
                dxp[:, :, kk * dilation : kk * dilation + t] += np.einsum(
                    "not,oc->nct", gd, wrev[:, :, kk]
                )
            dx = dxp[:, :, pad:]
            acc(x, dx[0] if single else dx)

    record(out, (x, w), bw, "conv1d_causal")
    return out
