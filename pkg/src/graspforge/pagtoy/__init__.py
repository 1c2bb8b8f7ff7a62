"""Toy progressive action generation: tokenized perception chain plus a
flow-matching action head, co-trained on grounding-only and full samples."""

from .tokens import (
    GraspTokenBounds,
    detokenize_bbox,
    detokenize_grasp,
    tokenize_bbox,
    tokenize_grasp,
)
from .model import (
    FlowBatch,
    ModelConfig,
    PagModel,
    ToyObservation,
    TrainingSample,
    decode_tokens,
    grad,
    loss_s1,
    loss_s2,
    loss_terms_and_grad,
    sample_actions,
    total_loss,
)
from .train import (
    TrainResult,
    build_training_samples,
    episode_features,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_csv,
)

__all__ = [
    "GraspTokenBounds",
    "tokenize_bbox",
    "detokenize_bbox",
    "tokenize_grasp",
    "detokenize_grasp",
    "ModelConfig",
    "PagModel",
    "ToyObservation",
    "TrainingSample",
    "FlowBatch",
    "loss_s2",
    "loss_s1",
    "total_loss",
    "grad",
    "loss_terms_and_grad",
    "decode_tokens",
    "sample_actions",
    "TrainResult",
    "train",
    "build_training_samples",
    "episode_features",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_csv",
]
