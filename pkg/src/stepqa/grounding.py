"""Context grounding: feature projection, cascaded text grounding,
weight-reweighted video grounding, and fusion.

Per question step, candidate image features attend to candidate answer
texts, the result attends to the question, and that attends to the
script sentences, yielding the text-grounded candidates plus the final
stage's head-averaged script weights. Those weights then reweight the
script-attended video features, and everything is fused through an MLP
into the step network's input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionOutput, AttentionParams, attend, init_attention, uniform_init
from .errors import ConfigError, DatasetError, ShapeError
from .tensor import Tensor, add_bias, concat_cols, matmul, mul, prelu

PRELU_INIT = 0.25


# ---------------------------------------------------------------------------
# sample containers
# ---------------------------------------------------------------------------

@dataclass
class StepCandidates:
    """One step's candidates: j answer-text rows, j button-image rows."""

    answers: np.ndarray   # j x d_t
    images: np.ndarray    # j x d_v
    truth: int

    @property
    def candidate_count(self) -> int:
        return self.answers.shape[0]


@dataclass
class FeatureBundle:
    """One question sample as precomputed embedding matrices."""

    sample_id: str
    button_count: int
    video: np.ndarray     # f x d_v, one row per sampled frame
    script: np.ndarray    # e x d_t, one row per sentence
    question: np.ndarray  # 1 x d_t
    steps: list[StepCandidates]


def validate_bundle(bundle: FeatureBundle, d_v: int, d_t: int) -> None:
    """Check every invariant a loaded sample must satisfy."""
    sid = bundle.sample_id

    def fail(msg: str):
        raise DatasetError(f"sample {sid!r}: {msg}")

    if bundle.video.ndim != 2 or bundle.video.shape[0] < 1:
        fail(f"video must be f x d_v with f >= 1, got {bundle.video.shape}")
    if bundle.video.shape[1] != d_v:
        fail(f"video width {bundle.video.shape[1]} != d_v {d_v}")
    if bundle.script.ndim != 2 or bundle.script.shape[0] < 1:
        fail(f"script must be e x d_t with e >= 1, got {bundle.script.shape}")
    if bundle.script.shape[1] != d_t:
        fail(f"script width {bundle.script.shape[1]} != d_t {d_t}")
    if bundle.question.shape != (1, d_t):
        fail(f"question must be 1 x {d_t}, got {bundle.question.shape}")
    if not bundle.steps:
        fail("sample has no steps")
    if bundle.button_count < 1:
        fail(f"button_count must be >= 1, got {bundle.button_count}")
    for idx, step in enumerate(bundle.steps):
        j = step.answers.shape[0]
        if j < 1:
            fail(f"step {idx}: needs at least one candidate")
        if step.answers.shape != (j, d_t):
            fail(f"step {idx}: answers shape {step.answers.shape} != ({j}, {d_t})")
        if step.images.shape != (j, d_v):
            fail(f"step {idx}: images shape {step.images.shape} != ({j}, {d_v})")
        if not 0 <= step.truth < j:
            fail(f"step {idx}: truth index {step.truth} out of range for {j} candidates")
    for name, arr in (("video", bundle.video), ("script", bundle.script),
                      ("question", bundle.question)):
        if not np.isfinite(arr).all():
            fail(f"{name} contains non-finite values")
    for idx, step in enumerate(bundle.steps):
        if not (np.isfinite(step.answers).all() and np.isfinite(step.images).all()):
            fail(f"step {idx}: non-finite candidate features")


# ---------------------------------------------------------------------------
# projection MLPs
# ---------------------------------------------------------------------------

@dataclass
class Mlp:
    """Input linear layer followed by two (linear + PReLU) layers.

    Hidden width equals output width; each PReLU layer owns one trainable
    scalar slope.
    """

    in_weight: Tensor
    in_bias: Tensor
    hidden_weight: Tensor
    hidden_bias: Tensor
    hidden_slope: Tensor
    out_weight: Tensor
    out_bias: Tensor
    out_slope: Tensor

    @property
    def in_width(self) -> int:
        return self.in_weight.rows

    @property
    def out_width(self) -> int:
        return self.out_weight.cols

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.in_w": self.in_weight,
            f"{prefix}.in_b": self.in_bias,
            f"{prefix}.hid_w": self.hidden_weight,
            f"{prefix}.hid_b": self.hidden_bias,
            f"{prefix}.hid_slope": self.hidden_slope,
            f"{prefix}.out_w": self.out_weight,
            f"{prefix}.out_b": self.out_bias,
            f"{prefix}.out_slope": self.out_slope,
        }


def init_mlp(in_width: int, out_width: int, rng: np.random.Generator,
             dtype=np.float32) -> Mlp:
    def bias(width):
        return Tensor(np.zeros((1, width), dtype=dtype), requires_grad=True)

    def slope():
        return Tensor(np.full((1, 1), PRELU_INIT, dtype=dtype), requires_grad=True)

    return Mlp(
        in_weight=uniform_init(rng, in_width, out_width, dtype),
        in_bias=bias(out_width),
        hidden_weight=uniform_init(rng, out_width, out_width, dtype),
        hidden_bias=bias(out_width),
        hidden_slope=slope(),
        out_weight=uniform_init(rng, out_width, out_width, dtype),
        out_bias=bias(out_width),
        out_slope=slope(),
    )


def mlp_forward(params: Mlp, x: Tensor) -> Tensor:
    if x.cols != params.in_width:
        raise ShapeError(f"mlp: input width {x.cols} != expected {params.in_width}")
    h = add_bias(matmul(x, params.in_weight), params.in_bias)
    h = prelu(add_bias(matmul(h, params.hidden_weight), params.hidden_bias),
              params.hidden_slope)
    h = prelu(add_bias(matmul(h, params.out_weight), params.out_bias),
              params.out_slope)
    return h


# ---------------------------------------------------------------------------
# grounding parameters
# ---------------------------------------------------------------------------

@dataclass
class GroundingParams:
    """Projection MLPs, the four attention blocks, and the fusion MLP."""

    video_proj: Mlp
    script_proj: Mlp
    question_proj: Mlp
    answer_proj: Mlp
    image_proj: Mlp
    answer_image_attn: AttentionParams   # candidate images over answer texts
    question_attn: AttentionParams       # grounded candidates over the question
    script_attn: AttentionParams         # grounded candidates over script sentences
    script_video_attn: AttentionParams   # script sentences over video frames
    fusion: Mlp                          # 4 * d_h -> d_o

    @property
    def width(self) -> int:
        return self.answer_image_attn.width

    def named(self, prefix: str = "grounding") -> dict[str, Tensor]:
        named = {}
        named.update(self.video_proj.named(f"{prefix}.video_proj"))
        named.update(self.script_proj.named(f"{prefix}.script_proj"))
        named.update(self.question_proj.named(f"{prefix}.question_proj"))
        named.update(self.answer_proj.named(f"{prefix}.answer_proj"))
        named.update(self.image_proj.named(f"{prefix}.image_proj"))
        named.update(self.answer_image_attn.named(f"{prefix}.answer_image_attn"))
        named.update(self.question_attn.named(f"{prefix}.question_attn"))
        named.update(self.script_attn.named(f"{prefix}.script_attn"))
        named.update(self.script_video_attn.named(f"{prefix}.script_video_attn"))
        named.update(self.fusion.named(f"{prefix}.fusion"))
        return named


def init_grounding(d_v: int, d_t: int, d_h: int, d_o: int, heads: int,
                   rng: np.random.Generator, dtype=np.float32) -> GroundingParams:
    return GroundingParams(
        video_proj=init_mlp(d_v, d_h, rng, dtype),
        script_proj=init_mlp(d_t, d_h, rng, dtype),
        question_proj=init_mlp(d_t, d_h, rng, dtype),
        answer_proj=init_mlp(d_t, d_h, rng, dtype),
        image_proj=init_mlp(d_v, d_h, rng, dtype),
        answer_image_attn=init_attention(d_h, heads, rng, dtype),
        question_attn=init_attention(d_h, heads, rng, dtype),
        script_attn=init_attention(d_h, heads, rng, dtype),
        script_video_attn=init_attention(d_h, heads, rng, dtype),
        fusion=init_mlp(4 * d_h, d_o, rng, dtype),
    )


# ---------------------------------------------------------------------------
# projected views and grounding ops
# ---------------------------------------------------------------------------

@dataclass
class ProjectedStep:
    answers: Tensor   # j x d_h
    images: Tensor    # j x d_h
    truth: int


@dataclass
class ProjectedBundle:
    sample_id: str
    button_count: int
    video: Tensor      # f x d_h
    script: Tensor     # e x d_h
    question: Tensor   # 1 x d_h
    steps: list[ProjectedStep]


@dataclass
class GroundedStep:
    """Grounding outputs for one step's candidates."""

    text_grounded: Tensor    # j x d_h
    script_weights: Tensor   # j x e, rows sum to 1
    video_grounded: Tensor   # j x d_h
    fused: Tensor            # j x d_o


def project(bundle: FeatureBundle, params: GroundingParams, dtype) -> ProjectedBundle:
    """Pass every raw feature matrix through its projection MLP."""
    if bundle.video.shape[1] != params.video_proj.in_width:
        raise ConfigError(
            f"video width {bundle.video.shape[1]} != configured d_v "
            f"{params.video_proj.in_width}")
    if bundle.script.shape[1] != params.script_proj.in_width:
        raise ConfigError(
            f"script width {bundle.script.shape[1]} != configured d_t "
            f"{params.script_proj.in_width}")

    def wrap(arr):
        return Tensor(np.asarray(arr, dtype=dtype))

    steps = [
        ProjectedStep(
            answers=mlp_forward(params.answer_proj, wrap(step.answers)),
            images=mlp_forward(params.image_proj, wrap(step.images)),
            truth=step.truth,
        )
        for step in bundle.steps
    ]
    return ProjectedBundle(
        sample_id=bundle.sample_id,
        button_count=bundle.button_count,
        video=mlp_forward(params.video_proj, wrap(bundle.video)),
        script=mlp_forward(params.script_proj, wrap(bundle.script)),
        question=mlp_forward(params.question_proj, wrap(bundle.question)),
        steps=steps,
    )


def ground_text(images: Tensor, answers: Tensor, question: Tensor, script: Tensor,
                params: GroundingParams) -> tuple[Tensor, Tensor]:
    """Cascade of three cross-attentions ending on the script.

    Returns the text-grounded candidates (j x d_h) and the final stage's
    head-averaged weights over script sentences (j x e).
    """
    stage_answers = attend(images, answers, answers, params.answer_image_attn)
    stage_question = attend(stage_answers.output, question, question,
                            params.question_attn)
    stage_script = attend(stage_question.output, script, script, params.script_attn)
    return stage_script.output, stage_script.avg_weights


def ground_video(script: Tensor, video: Tensor, script_weights: Tensor,
                 params: GroundingParams) -> Tensor:
    """Reweight script-attended video features by the text-grounding weights.

    The weights matrix (j x e) left-multiplies attend(script, video, video)
    (e x d_h), giving one video-grounded row per candidate: each candidate's
    row is its script-attention mixture of the script-video features.
    """
    if script_weights.cols != script.rows:
        raise ShapeError(
            f"ground_video: weights have {script_weights.cols} columns but the "
            f"script has {script.rows} sentences")
    attended = attend(script, video, video, params.script_video_attn)
    return matmul(script_weights, attended.output)


def fuse(video_grounded: Tensor, text_grounded: Tensor, images: Tensor,
         answers: Tensor, params: GroundingParams) -> Tensor:
    """Concatenate [video; text; images; answers] and apply the fusion MLP."""
    rows = video_grounded.rows
    width = video_grounded.cols
    for name, t in (("text_grounded", text_grounded), ("images", images),
                    ("answers", answers)):
        if t.rows != rows:
            raise ShapeError(f"fuse: {name} has {t.rows} rows, expected {rows}")
        if t.cols != width:
            raise ShapeError(f"fuse: {name} has width {t.cols}, expected {width}")
    stacked = concat_cols([video_grounded, text_grounded, images, answers])
    return mlp_forward(params.fusion, stacked)


def ground_step(projected: ProjectedBundle, step: ProjectedStep,
                params: GroundingParams) -> GroundedStep:
    """Run the full grounding pipeline for one step."""
    text_grounded, script_weights = ground_text(
        step.images, step.answers, projected.question, projected.script, params)
    video_grounded = ground_video(
        projected.script, projected.video, script_weights, params)
    fused = fuse(video_grounded, text_grounded, step.images, step.answers, params)
    return GroundedStep(
        text_grounded=text_grounded,
        script_weights=script_weights,
        video_grounded=video_grounded,
        fused=fused,
    )
