"""stepqa: multi-step multimodal question answering over precomputed embeddings.

Candidate answers for each step of a "how do I operate this device"
question are grounded against question, script, and video features
through a cascade of cross-attentions, then scored by a recurrent step
network. Everything runs on a small from-scratch reverse-mode autodiff
engine with numba-accelerated kernels (set STEPQA_KERNELS=numpy for the
pure-numpy fallback).
"""

from .tensor import Graph, Tensor, sgd_step
from .attention import AttentionParams, attend, init_attention
from .grounding import (
    FeatureBundle, GroundedStep, GroundingParams, StepCandidates,
    fuse, ground_step, ground_text, ground_video, init_grounding, project,
)
from .step_network import (
    StepNetParams, StepState, carry_state, gru_cell, init_step_net,
    initial_state, step_scores,
)
from .model import Model, ModelConfig
from .metrics import (
    MetricsReport, RankRecord, bucket_report, compute_metrics, format_report,
    rank_of_truth,
)
from .trainer import TrainConfig, TrainLog, evaluate, select_best, stratified_split, train
from .data_io import (
    SyntheticConfig, generate_synthetic, load_checkpoint, load_dataset,
    oracle_report, save_checkpoint, save_dataset,
)
from .gradcheck import GradReport, check_model_gradients, grad_check

__version__ = "0.1.0"

__all__ = [
    "AttentionParams", "FeatureBundle", "GradReport", "Graph", "GroundedStep",
    "GroundingParams", "MetricsReport", "Model", "ModelConfig", "RankRecord",
    "StepCandidates", "StepNetParams", "StepState", "SyntheticConfig",
    "Tensor", "TrainConfig", "TrainLog", "attend", "bucket_report",
    "carry_state", "check_model_gradients", "compute_metrics", "evaluate",
    "format_report", "fuse", "generate_synthetic", "grad_check", "ground_step",
    "ground_text", "ground_video", "gru_cell", "init_attention",
    "init_grounding", "init_step_net", "initial_state", "load_checkpoint",
    "load_dataset", "oracle_report", "project", "rank_of_truth",
    "save_checkpoint", "save_dataset", "select_best", "sgd_step",
    "step_scores", "stratified_split", "train",
]
