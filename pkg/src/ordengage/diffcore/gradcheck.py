"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError, ParameterError
from .tensor import Tape, Tensor, backward

__all__ = ["grad_check"]


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` must be a deterministic zero-argument callable returning a scalar
    Tensor built from the tensors in ``params`` (a dict or an iterable of
    parameter Tensors).  Returns the max over all parameter entries of
    |analytic − numeric| / max(1, |numeric|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ParameterError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    tensors = list(params.values()) if isinstance(params, dict) else list(params)

    with Tape() as tape:
        loss = f()
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ContractError("grad_check requires f() to return a scalar Tensor")
        if not np.isfinite(loss.data):
            raise NumericError("f() is non-finite at the unperturbed point")
        grads = backward(tape, loss)

    worst = 0.0
    for p in tensors:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(
                    f"non-finite value while perturbing parameter "
                    f"{p.name or 'unnamed'} entry {i}"
                )
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
