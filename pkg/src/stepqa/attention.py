"""Multi-head scaled dot-product cross-attention.

Besides the attended output, every call returns the head-averaged
attention weight matrix: the downstream video-grounding step reweights
script-video features with it, so the weights stay on the autodiff tape
and receive gradients like any other intermediate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, add, affine, concat_cols, matmul, softmax_rows, transpose


@dataclass
class AttentionParams:
    """Per-head query/key/value projections plus one output projection.

    Each head projects width d down to d // heads; head outputs are
    concatenated back to width d and passed through ``out_proj``.
    """

    heads: int
    query_proj: list[Tensor]   # heads x (d, d // heads)
    key_proj: list[Tensor]
    value_proj: list[Tensor]
    out_proj: Tensor           # (d, d)

    @property
    def width(self) -> int:
        return self.out_proj.rows

    def named(self, prefix: str) -> dict[str, Tensor]:
        named = {}
        for i in range(self.heads):
            named[f"{prefix}.q{i}"] = self.query_proj[i]
            named[f"{prefix}.k{i}"] = self.key_proj[i]
            named[f"{prefix}.v{i}"] = self.value_proj[i]
        named[f"{prefix}.out"] = self.out_proj
        return named


@dataclass
class AttentionOutput:
    output: Tensor        # n_q x d
    avg_weights: Tensor   # n_q x n_k, mean of the per-head softmax weights


def uniform_init(rng: np.random.Generator, rows: int, cols: int, dtype) -> Tensor:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in = rows."""
    bound = 1.0 / math.sqrt(rows)
    data = rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)
    return Tensor(data, requires_grad=True)


def init_attention(width: int, heads: int, rng: np.random.Generator,
                   dtype=np.float32) -> AttentionParams:
    if heads < 1:
        raise ConfigError(f"attention needs >= 1 head, got {heads}")
    if width % heads != 0:
        raise ConfigError(f"feature width {width} is not divisible by {heads} heads")
    head_width = width // heads
    return AttentionParams(
        heads=heads,
        query_proj=[uniform_init(rng, width, head_width, dtype) for _ in range(heads)],
        key_proj=[uniform_init(rng, width, head_width, dtype) for _ in range(heads)],
        value_proj=[uniform_init(rng, width, head_width, dtype) for _ in range(heads)],
        out_proj=uniform_init(rng, width, width, dtype),
    )


def attend(query: Tensor, key: Tensor, value: Tensor,
           params: AttentionParams) -> AttentionOutput:
    """Scaled dot-product attention over projected inputs.

    Per head i: weights_i = softmax(Q_i K_i^T / sqrt(d_head)); the final
    output concatenates the per-head attended values and applies the
    output projection. ``avg_weights`` is the plain mean of the per-head
    weight matrices, one row per query, one column per key.
    """
    if key.rows != value.rows:
        raise ShapeError(f"attend: key rows {key.rows} != value rows {value.rows}")
    width = params.width
    for name, t in (("query", query), ("key", key), ("value", value)):
        if t.cols != width:
            raise ShapeError(f"attend: {name} width {t.cols} != attention width {width}")

    head_width = width // params.heads
    scale = 1.0 / math.sqrt(head_width)
    head_outputs = []
    weight_sum = None
    for i in range(params.heads):
        q = matmul(query, params.query_proj[i])
        k = matmul(key, params.key_proj[i])
        v = matmul(value, params.value_proj[i])
        logits = affine(matmul(q, transpose(k)), scale)
        weights = softmax_rows(logits)
        head_outputs.append(matmul(weights, v))
        weight_sum = weights if weight_sum is None else add(weight_sum, weights)

    output = matmul(concat_cols(head_outputs), params.out_proj)
    avg_weights = affine(weight_sum, 1.0 / params.heads)
    return AttentionOutput(output=output, avg_weights=avg_weights)
