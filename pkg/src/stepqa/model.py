"""Full model: projection + grounding + step network over one sample.

Training uses teacher-forced state carry and a per-sample loss that
averages the per-step cross-entropies; evaluation carries the greedy
argmax state and never sees the ground truth until ranking time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError
from .grounding import (
    FeatureBundle, GroundingParams, ground_step, init_grounding, project,
)
from .step_network import (
    StepNetParams, carry_state, init_step_net, initial_state, step_scores, VARIANTS,
)
from .tensor import Tensor, cross_entropy, dtype_for, mean_scalars


@dataclass
class ModelConfig:
    """Dimensions and variant switches; d_o/d_s default to d_h."""

    d_v: int
    d_t: int
    d_h: int = 768
    heads: int = 3
    d_o: int | None = None
    d_s: int | None = None
    step_variant: str = "gru"
    precision: str = "f32"

    def __post_init__(self):
        if self.d_o is None:
            self.d_o = self.d_h
        if self.d_s is None:
            self.d_s = self.d_h
        for name in ("d_v", "d_t", "d_h", "d_o", "d_s"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.d_h % self.heads != 0:
            raise ConfigError(f"d_h {self.d_h} is not divisible by heads {self.heads}")
        if self.step_variant not in VARIANTS:
            raise ConfigError(
                f"step_variant must be one of {VARIANTS}, got {self.step_variant!r}")
        dtype_for(self.precision)  # raises on bad value

    @property
    def dtype(self):
        return dtype_for(self.precision)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    config: ModelConfig
    grounding: GroundingParams
    step_net: StepNetParams
    init_seed: int | None = field(default=None)

    @classmethod
    def init(cls, config: ModelConfig, seed) -> "Model":
        """Seeded initialization; identical seeds give identical parameters."""
        rng = np.random.default_rng(seed)
        dtype = config.dtype
        grounding = init_grounding(
            config.d_v, config.d_t, config.d_h, config.d_o, config.heads, rng, dtype)
        step_net = init_step_net(
            config.step_variant, config.d_o, config.d_s, rng, dtype)
        plain_seed = seed if isinstance(seed, int) else None
        return cls(config=config, grounding=grounding, step_net=step_net,
                   init_seed=plain_seed)

    def named_parameters(self) -> dict[str, Tensor]:
        named = self.grounding.named("grounding")
        named.update(self.step_net.named("step_net"))
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def sample_loss(self, bundle: FeatureBundle) -> Tensor:
        """Teacher-forced loss: mean over steps of cross_entropy(logits, truth)."""
        projected = project(bundle, self.grounding, self.config.dtype)
        state = initial_state(self.config.d_s, self.config.dtype)
        losses = []
        for step in projected.steps:
            grounded = ground_step(projected, step, self.grounding)
            logits, states = step_scores(grounded.fused, state, self.step_net)
            losses.append(cross_entropy(logits, step.truth))
            state = carry_state(states, truth=step.truth)
        return mean_scalars(losses)

    def sample_step_scores(self, bundle: FeatureBundle) -> list[tuple[np.ndarray, int]]:
        """Greedy-carry evaluation: per step, (candidate scores, truth index).

        Call outside any Graph context; nothing is recorded.
        """
        projected = project(bundle, self.grounding, self.config.dtype)
        state = initial_state(self.config.d_s, self.config.dtype)
        per_step = []
        for step in projected.steps:
            grounded = ground_step(projected, step, self.grounding)
            logits, states = step_scores(grounded.fused, state, self.step_net)
            scores = logits.data[0].copy()
            per_step.append((scores, step.truth))
            state = carry_state(states, scores=scores)
        return per_step

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of every parameter array, keyed by name."""
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_snapshot(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = sorted(set(named) - set(arrays))
        extra = sorted(set(arrays) - set(named))
        if missing or extra:
            raise ConfigError(
                f"parameter name mismatch; missing={missing}, unexpected={extra}")
        for name, p in named.items():
            arr = np.asarray(arrays[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"parameter {name}: shape {arr.shape} != expected {p.data.shape}")
            p.data = np.ascontiguousarray(arr.copy())
