"""Plain SGD and Adam parameter updates."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, ParameterError
from .tensor import Tensor

__all__ = ["Optimizer"]


class Optimizer:
    """Holds per-parameter state for SGD or Adam updates.

    Adam follows the standard bias-corrected moment scheme; SGD is the bare
    rule θ ← θ − lr·g.  ``step_count`` increases by exactly one per call to
    :meth:`step`.
    """

    KINDS = ("sgd", "adam")

    def __init__(
        self,
        kind: str = "adam",
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if kind not in self.KINDS:
            raise ParameterError(f"unknown optimizer kind {kind!r}")
        if learning_rate <= 0:
            raise ParameterError(f"learning_rate must be positive, got {learning_rate}")
        self.kind = kind
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        # id(param) -> (param ref, first moment, second moment)
        self._moments: dict[int, tuple[Tensor, np.ndarray, np.ndarray]] = {}

    def step(self, params, grads) -> None:
        """Update ``params`` in place from a gradient map.

        ``params`` is an iterable (or dict name → Tensor) of parameters;
        ``grads`` maps Tensor → ndarray as returned by ``backward``.
        Parameters without a gradient entry are left unchanged.
        """
        tensors = list(params.values()) if isinstance(params, dict) else list(params)
        self.step_count += 1
        for p in tensors:
            g = grads.get(p)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ContractError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{p.name or 'unnamed'} shape {p.data.shape}"
                )
            if self.kind == "sgd":
                p.data -= self.learning_rate * g
            else:
                entry = self._moments.get(id(p))
                if entry is None:
                    m = np.zeros_like(p.data)
                    v = np.zeros_like(p.data)
                else:
                    _, m, v = entry
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                self._moments[id(p)] = (p, m, v)
                t = self.step_count
                m_hat = m / (1.0 - self.beta1**t)
                v_hat = v / (1.0 - self.beta2**t)
                p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
