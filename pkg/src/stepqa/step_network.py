"""Per-step candidate scoring with state carried across steps.

Each candidate row of the fused step input is pushed through the step
cell (GRU or MLP) against the previous step's state, producing one
candidate state and one scalar logit. Exactly one candidate state
survives into the next step: the ground-truth one under teacher forcing
(training), the argmax one under greedy carry (evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .grounding import Mlp, init_mlp, mlp_forward
from .attention import uniform_init
from .tensor import (
    Tensor, add, affine, concat_cols, matmul, mul, sigmoid, take_row, tanh, zeros,
)

VARIANTS = ("gru", "mlp")


@dataclass
class GruParams:
    """Gate parameters; W maps the input, U the state, one bias row each."""

    update_w: Tensor
    update_u: Tensor
    update_b: Tensor
    reset_w: Tensor
    reset_u: Tensor
    reset_b: Tensor
    cand_w: Tensor
    cand_u: Tensor
    cand_b: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.update_w": self.update_w,
            f"{prefix}.update_u": self.update_u,
            f"{prefix}.update_b": self.update_b,
            f"{prefix}.reset_w": self.reset_w,
            f"{prefix}.reset_u": self.reset_u,
            f"{prefix}.reset_b": self.reset_b,
            f"{prefix}.cand_w": self.cand_w,
            f"{prefix}.cand_u": self.cand_u,
            f"{prefix}.cand_b": self.cand_b,
        }


@dataclass
class StepNetParams:
    variant: str                  # "gru" | "mlp"
    gru: GruParams | None
    mlp: Mlp | None               # (d_o + d_s) -> d_s for the MLP variant
    score_weight: Tensor          # d_s x 1
    score_bias: Tensor            # 1 x 1

    @property
    def state_width(self) -> int:
        return self.score_weight.rows

    def named(self, prefix: str = "step_net") -> dict[str, Tensor]:
        named = {}
        if self.variant == "gru":
            named.update(self.gru.named(f"{prefix}.gru"))
        else:
            named.update(self.mlp.named(f"{prefix}.mlp"))
        named[f"{prefix}.score_w"] = self.score_weight
        named[f"{prefix}.score_b"] = self.score_bias
        return named


@dataclass
class StepState:
    """Hidden state carried between steps; starts as the zero vector."""

    hidden: Tensor   # 1 x d_s
    step_index: int


def initial_state(state_width: int, dtype=np.float32) -> StepState:
    return StepState(hidden=zeros(1, state_width, dtype=dtype), step_index=0)


def init_step_net(variant: str, in_width: int, state_width: int,
                  rng: np.random.Generator, dtype=np.float32) -> StepNetParams:
    if variant not in VARIANTS:
        raise ConfigError(f"step variant must be one of {VARIANTS}, got {variant!r}")

    def bias():
        return Tensor(np.zeros((1, state_width), dtype=dtype), requires_grad=True)

    gru = mlp = None
    if variant == "gru":
        gru = GruParams(
            update_w=uniform_init(rng, in_width, state_width, dtype),
            update_u=uniform_init(rng, state_width, state_width, dtype),
            update_b=bias(),
            reset_w=uniform_init(rng, in_width, state_width, dtype),
            reset_u=uniform_init(rng, state_width, state_width, dtype),
            reset_b=bias(),
            cand_w=uniform_init(rng, in_width, state_width, dtype),
            cand_u=uniform_init(rng, state_width, state_width, dtype),
            cand_b=bias(),
        )
    else:
        mlp = init_mlp(in_width + state_width, state_width, rng, dtype)
    return StepNetParams(
        variant=variant,
        gru=gru,
        mlp=mlp,
        score_weight=uniform_init(rng, state_width, 1, dtype),
        score_bias=Tensor(np.zeros((1, 1), dtype=dtype), requires_grad=True),
    )


def gru_cell(x: Tensor, hidden: Tensor, params: GruParams) -> Tensor:
    """One GRU update for a single 1 x d_o input row.

    z = sigmoid(xWz + hUz + bz); r = sigmoid(xWr + hUr + br)
    cand = tanh(xWh + (r*h)Uh + bh); h' = (1 - z)*h + z*cand
    """
    if x.rows != 1 or hidden.rows != 1:
        raise ShapeError(f"gru_cell: expects 1-row tensors, got {x.shape}, {hidden.shape}")
    z = sigmoid(add(add(matmul(x, params.update_w), matmul(hidden, params.update_u)),
                    params.update_b))
    r = sigmoid(add(add(matmul(x, params.reset_w), matmul(hidden, params.reset_u)),
                    params.reset_b))
    cand = tanh(add(add(matmul(x, params.cand_w), matmul(mul(r, hidden), params.cand_u)),
                    params.cand_b))
    one_minus_z = affine(z, -1.0, 1.0)
    return add(mul(one_minus_z, hidden), mul(z, cand))


def step_scores(fused: Tensor, prev: StepState,
                params: StepNetParams) -> tuple[Tensor, list[StepState]]:
    """Score all candidates of one step against the previous state.

    Returns the 1 x j raw logits and one candidate state per row.
    """
    if prev.hidden.cols != params.state_width:
        raise ShapeError(
            f"step_scores: state width {prev.hidden.cols} != {params.state_width}")
    logits_parts = []
    states = []
    for c in range(fused.rows):
        row = take_row(fused, c)
        if params.variant == "gru":
            hidden = gru_cell(row, prev.hidden, params.gru)
        else:
            hidden = mlp_forward(params.mlp, concat_cols([row, prev.hidden]))
        score = add(matmul(hidden, params.score_weight), params.score_bias)
        logits_parts.append(score)
        states.append(StepState(hidden=hidden, step_index=prev.step_index + 1))
    return concat_cols(logits_parts), states


def carry_state(states: list[StepState], *, truth: int | None = None,
                scores=None) -> StepState:
    """Pick the state that survives into the next step.

    Teacher forcing (``truth=``) picks the ground-truth candidate; greedy
    (``scores=``) picks the argmax, ties broken by lowest index.
    """
    if not states:
        raise ValueError("carry_state: empty state list")
    if (truth is None) == (scores is None):
        raise ValueError("carry_state: pass exactly one of truth= or scores=")
    if truth is not None:
        if not 0 <= truth < len(states):
            raise IndexError(f"carry_state: truth {truth} out of range for {len(states)}")
        return states[truth]
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != len(states):
        raise ShapeError(f"carry_state: {scores.size} scores for {len(states)} states")
    return states[int(np.argmax(scores))]
