"""Weakly-supervised audio-visual video parsing toolkit.

Trains a per-segment attention model from video-level labels, guided by an
EMA-teacher that provides segment-level pseudo masks and by a class-aware
cross-modal agreement loss, and evaluates it with the segment/event F1
protocol. Ships a synthetic generator with planted ground truth so the
whole pipeline is testable at desk scale.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, backward, grad_check, no_tape
from .model import (
    ModelConfig, ModelParams, ForwardOutput,
    init_params, han_forward, mmil_pool, forward, fuse_probs,
    save_checkpoint, load_checkpoint,
)
from .teacher import (
    TeacherState, PseudoMask,
    init_teacher, ema_update, teacher_predict, adaptive_threshold_mask, topk_mask,
)
from .losses import (
    ValidPairSet, LossReport,
    avvp_loss, pseudo_loss, select_valid_pairs, cma_loss, total_loss,
)
from .metrics import (
    SegmentLabels, EventSpan, VideoScores, MetricReport,
    binarize, merge_events, grid_events, span_iou, segment_f1, event_f1,
    match_events, evaluate_video, aggregate, save_grid_file, load_grid_file,
)
from .datagen import (
    GenConfig, VideoSample, Dataset,
    generate, save_dataset, load_dataset, class_prototypes,
)
from .trainer import (
    TrainConfig, TrainState, TrainingDivergedError,
    init_train_state, train_epoch, train, evaluate, predict_sample,
    generate_masks, write_history_csv,
)
from .estimator import AudioVisualParser

__all__ = [
    "__version__",
    "Tensor", "Tape", "backward", "grad_check", "no_tape",
    "ModelConfig", "ModelParams", "ForwardOutput",
    "init_params", "han_forward", "mmil_pool", "forward", "fuse_probs",
    "save_checkpoint", "load_checkpoint",
    "TeacherState", "PseudoMask",
    "init_teacher", "ema_update", "teacher_predict",
    "adaptive_threshold_mask", "topk_mask",
    "ValidPairSet", "LossReport",
    "avvp_loss", "pseudo_loss", "select_valid_pairs", "cma_loss", "total_loss",
    "SegmentLabels", "EventSpan", "VideoScores", "MetricReport",
    "binarize", "merge_events", "grid_events", "span_iou", "segment_f1",
    "event_f1", "match_events", "evaluate_video", "aggregate",
    "save_grid_file", "load_grid_file",
    "GenConfig", "VideoSample", "Dataset",
    "generate", "save_dataset", "load_dataset", "class_prototypes",
    "TrainConfig", "TrainState", "TrainingDivergedError",
    "init_train_state", "train_epoch", "train", "evaluate", "predict_sample",
    "generate_masks", "write_history_csv",
    "AudioVisualParser",
]
