"""Trainable networks: dense layers, LSTM and TCN encoders, fusion and heads.

All parameters are diffcore Tensors initialized uniform in ±1/sqrt(fan_in)
from a seeded generator.  Forward passes take batched inputs; an ``rng``
argument enables training mode (dropout on) and ``rng=None`` means
evaluation mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import (
    Tensor,
    add,
    concat,
    conv1d_causal,
    dropout,
    l2_normalize_rows,
    matmul,
    mean_axis,
    mul,
    narrow,
    relu,
    reshape,
    sigmoid,
    tanh,
    transpose,
)
from ..errors import NumericError, ParameterError, ShapeError

ENCODER_KINDS = ("lstm", "tcn")
POOL_KINDS = ("last", "mean")


@dataclass(frozen=True)
class LstmConfig:
    input_dim: int
    hidden: int = 256
    layers: int = 2

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1 or self.input_dim < 1:
            raise ParameterError(f"invalid LSTM config {self}")


@dataclass(frozen=True)
class TcnConfig:
    input_dim: int
    levels: int = 8
    hidden: int = 256
    kernel: int = 16
    dropout: float = 0.1
    pool: str = "last"

    def __post_init__(self):
        if self.levels < 1 or self.kernel < 1 or self.hidden < 1 or self.input_dim < 1:
            raise ParameterError(f"invalid TCN config {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.pool not in POOL_KINDS:
            raise ParameterError(f"unknown pool {self.pool!r}")

    def receptive_field(self) -> int:
        """Frames visible to the last output: 1 + 2(K−1)(2^L − 1) for 2-conv blocks."""
        return 1 + 2 * (self.kernel - 1) * (2**self.levels - 1)


@dataclass(frozen=True)
class FusionConfig:
    latent_dims: int = 256
    hidden: int = 128
    out_dims: int = 32


@dataclass(frozen=True)
class HeadConfig:
    embed_dim: int = 256
    hidden: int = 128
    num_classes: int = 4

    def __post_init__(self):
        if self.num_classes < 1:
            raise ParameterError("num_classes must be >= 1")


def _init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Affine map x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng, name: str):
        self.w = Tensor(_init(rng, (in_dim, out_dim), in_dim), requires_grad=True, name=f"{name}.w")
        self.b = Tensor(_init(rng, (out_dim,), in_dim), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class FusionNet:
    """Per-frame compression of the latent affective vector (256 → 128 → 32)."""

    def __init__(self, cfg: FusionConfig, rng):
        self.cfg = cfg
        self.fc1 = Dense(cfg.latent_dims, cfg.hidden, rng, "fusion.fc1")
        self.fc2 = Dense(cfg.hidden, cfg.out_dims, rng, "fusion.fc2")

    def __call__(self, latent: Tensor) -> Tensor:
        if latent.data.ndim != 2 or latent.data.shape[1] != self.cfg.latent_dims:
            raise ShapeError(
                f"fusion expects (*, {self.cfg.latent_dims}), got {latent.data.shape}"
            )
        return self.fc2(relu(self.fc1(latent)))

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()


def fusion_forward(fusion: FusionNet, frames_latent: Tensor, frames_rest: Tensor) -> Tensor:
    """Fuse one sample: (T×256 latent, T×14 rest) → T×46.

    Output column order is [valence, arousal, fused..., behavioral...],
    where the first two rest columns are affect and the remainder behavioral.
    """
    if frames_rest.data.ndim != 2 or frames_rest.data.shape[1] != 14:
        raise ShapeError(f"rest features must be (T, 14), got {frames_rest.data.shape}")
    fused = fusion(frames_latent)
    affect = narrow(frames_rest, 1, 0, 2)
    behavioral = narrow(frames_rest, 1, 2, 12)
    return concat([affect, fused, behavioral], axis=1)


class LstmEncoder:
    """Stacked LSTM; the embedding is the top layer's final hidden state."""

    def __init__(self, cfg: LstmConfig, rng):
        self.cfg = cfg
        self.wx, self.wh, self.b = [], [], []
        for layer in range(cfg.layers):
            in_dim = cfg.input_dim if layer == 0 else cfg.hidden
            self.wx.append(
                Tensor(_init(rng, (in_dim, 4 * cfg.hidden), in_dim),
                       requires_grad=True, name=f"lstm.l{layer}.wx")
            )
            self.wh.append(
                Tensor(_init(rng, (cfg.hidden, 4 * cfg.hidden), cfg.hidden),
                       requires_grad=True, name=f"lstm.l{layer}.wh")
            )
            self.b.append(
                Tensor(np.zeros(4 * cfg.hidden), requires_grad=True, name=f"lstm.l{layer}.b")
            )

    @property
    def output_dim(self) -> int:
        return self.cfg.hidden

    def forward(self, x: Tensor, rng=None) -> Tensor:
        """x: (N, T, D) → (N, hidden)."""
        if x.data.ndim != 3 or x.data.shape[2] != self.cfg.input_dim:
            raise ShapeError(
                f"LSTM expects (N, T, {self.cfg.input_dim}), got {x.data.shape}"
            )
        if not np.all(np.isfinite(x.data)):
            raise NumericError("non-finite values in LSTM input")
        n, t, _ = x.data.shape
        h_dim = self.cfg.hidden
        steps = [reshape(narrow(x, 1, i, 1), (n, x.data.shape[2])) for i in range(t)]
        for layer in range(self.cfg.layers):
            wx, wh, b = self.wx[layer], self.wh[layer], self.b[layer]
            h = Tensor(np.zeros((n, h_dim)))
            c = Tensor(np.zeros((n, h_dim)))
            outputs = []
            for x_t in steps:
                gates = add(add(matmul(x_t, wx), matmul(h, wh)), b)
                i_g = sigmoid(narrow(gates, 1, 0, h_dim))
                f_g = sigmoid(narrow(gates, 1, h_dim, h_dim))
                g_g = tanh(narrow(gates, 1, 2 * h_dim, h_dim))
                o_g = sigmoid(narrow(gates, 1, 3 * h_dim, h_dim))
                c = add(mul(f_g, c), mul(i_g, g_g))
                h = mul(o_g, tanh(c))
                outputs.append(h)
            steps = outputs
        return steps[-1]

    def parameters(self):
        return list(self.wx) + list(self.wh) + list(self.b)


class TcnEncoder:
    """Residual blocks of two dilated causal convolutions, dilation 2^level."""

    def __init__(self, cfg: TcnConfig, rng):
        self.cfg = cfg
        self.blocks = []
        for level in range(cfg.levels):
            in_ch = cfg.input_dim if level == 0 else cfg.hidden
            prefix = f"tcn.b{level}"
            block = {
                "w1": Tensor(_init(rng, (cfg.hidden, in_ch, cfg.kernel), in_ch * cfg.kernel),
                             requires_grad=True, name=f"{prefix}.w1"),
                "b1": Tensor(np.zeros((cfg.hidden, 1)), requires_grad=True, name=f"{prefix}.b1"),
                "w2": Tensor(_init(rng, (cfg.hidden, cfg.hidden, cfg.kernel), cfg.hidden * cfg.kernel),
                             requires_grad=True, name=f"{prefix}.w2"),
                "b2": Tensor(np.zeros((cfg.hidden, 1)), requires_grad=True, name=f"{prefix}.b2"),
                "dilation": 2**level,
            }
            if in_ch != cfg.hidden:
                block["wd"] = Tensor(_init(rng, (cfg.hidden, in_ch, 1), in_ch),
                                     requires_grad=True, name=f"{prefix}.wd")
                block["bd"] = Tensor(np.zeros((cfg.hidden, 1)), requires_grad=True,
                                     name=f"{prefix}.bd")
            self.blocks.append(block)

    @property
    def output_dim(self) -> int:
        return self.cfg.hidden

    def forward(self, x: Tensor, rng=None) -> Tensor:
        """x: (N, T, D) → (N, hidden); rng enables dropout (training mode)."""
        if x.data.ndim != 3 or x.data.shape[2] != self.cfg.input_dim:
            raise ShapeError(
                f"TCN expects (N, T, {self.cfg.input_dim}), got {x.data.shape}"
            )
        if not np.all(np.isfinite(x.data)):
            raise NumericError("non-finite values in TCN input")
        n, t, _ = x.data.shape
        y = transpose(x, (0, 2, 1))  # (N, C, T)
        for block in self.blocks:
            out = relu(add(conv1d_causal(y, block["w1"], block["dilation"]), block["b1"]))
            if rng is not None and self.cfg.dropout > 0:
                out = dropout(out, self.cfg.dropout, rng)
            out = relu(add(conv1d_causal(out, block["w2"], block["dilation"]), block["b2"]))
            if rng is not None and self.cfg.dropout > 0:
                out = dropout(out, self.cfg.dropout, rng)
            res = y
            if "wd" in block:
                res = add(conv1d_causal(y, block["wd"], 1), block["bd"])
            y = relu(add(out, res))
        if self.cfg.pool == "mean":
            return mean_axis(y, 2)
        last = narrow(y, 2, t - 1, 1)
        return reshape(last, (n, self.cfg.hidden))

    def parameters(self):
        params = []
        for block in self.blocks:
            for key in ("w1", "b1", "w2", "b2", "wd", "bd"):
                if key in block:
                    params.append(block[key])
        return params


class ProjectionHead:
    """Single dense map onto the unit sphere; the contrastive space."""

    def __init__(self, in_dim: int, out_dim: int, rng):
        self.fc = Dense(in_dim, out_dim, rng, "proj")

    def forward(self, embedding: Tensor) -> Tensor:
        return l2_normalize_rows(self.fc(embedding))

    def parameters(self):
        return self.fc.parameters()


class ClassifierHead:
    """Two dense layers producing logits (num_classes wide, or 1 for binary)."""

    def __init__(self, cfg: HeadConfig, rng):
        self.cfg = cfg
        self.fc1 = Dense(cfg.embed_dim, cfg.hidden, rng, "head.fc1")
        self.fc2 = Dense(cfg.hidden, cfg.num_classes, rng, "head.fc2")

    def forward(self, embedding: Tensor) -> Tensor:
        if embedding.data.ndim != 2 or embedding.data.shape[1] != self.cfg.embed_dim:
            raise ShapeError(
                f"head expects (*, {self.cfg.embed_dim}), got {embedding.data.shape}"
            )
        return self.fc2(relu(self.fc1(embedding)))

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()
