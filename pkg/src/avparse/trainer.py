"""Training loop: student steps, per-step EMA updates, per-epoch mask refresh.

Videos are visited in dataset order with batch size 1 and no in-loop
randomness, so a run is fully determined by the two configs and the data.
Pseudo masks are regenerated from the teacher once per epoch; the first
`warmup_epochs` epochs skip the pseudo term so the teacher can drift away
from the random init before its masks are trusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .losses import LossReport, total_loss
from .model import ModelConfig, ModelParams, forward, init_params
from .teacher import (ADAPTIVE, TOPK, TeacherState, adaptive_threshold_mask,
                      ema_update, init_teacher, teacher_predict, topk_mask)
from .tensor import Tape, backward, no_tape

OPTIMIZERS = ("sgd", "momentum")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending video id and components."""

    def __init__(self, video_id, report):
        super().__init__(
            f"non-finite loss on video {video_id}: avvp={report.l_avvp} "
            f"pseudo={report.l_pseudo} cma={report.l_cma}")
        self.video_id = video_id
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.05
    optimizer: str = "sgd"
    momentum: float = 0.9
    alpha: float = 0.999
    mask_mode: str = ADAPTIVE
    gamma: float = 2.0
    k: int = 3
    tau_a: float = 0.5
    tau_v: float = 0.5
    enable_ema: bool = True
    enable_cma: bool = True
    label_gate: bool = True
    warmup_epochs: int = 1
    ema_every: int = 1      # optimizer steps between EMA updates
    mask_every: int = 1     # epochs between mask refreshes (after warm-up)
    pseudo_weight: float = 1.0
    cma_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.mask_mode not in (ADAPTIVE, TOPK):
            raise ValueError(f"mask_mode must be '{ADAPTIVE}' or '{TOPK}', got {self.mask_mode!r}")
        if self.epochs < 1 or self.warmup_epochs < 0:
            raise ValueError("epochs must be >= 1 and warmup_epochs >= 0")
        if self.ema_every < 1 or self.mask_every < 1:
            raise ValueError("ema_every and mask_every must be >= 1")


@dataclass
class TrainState:
    params: ModelParams
    teacher: TeacherState
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    velocity: dict = field(default_factory=dict)
    cached_masks: dict | None = None
    rng: np.random.Generator | None = None


def init_train_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    params = init_params(model_config)
    teacher = init_teacher(params, alpha=train_config.alpha)
    return TrainState(params=params, teacher=teacher,
                      rng=np.random.default_rng(train_config.seed))


def mask_for_sample(teacher: TeacherState, sample, config: TrainConfig):
    probs = teacher_predict(teacher, sample.audio_features, sample.visual_features)
    if config.mask_mode == ADAPTIVE:
        return adaptive_threshold_mask(probs, config.gamma, sample.video_label,
                                       label_gate=config.label_gate)
    return topk_mask(probs, config.k, sample.video_label, label_gate=config.label_gate)


def generate_masks(teacher: TeacherState, dataset, config: TrainConfig) -> dict:
    return {sample.id: mask_for_sample(teacher, sample, config) for sample in dataset}


def _sgd_step(state: TrainState, config: TrainConfig):
    use_momentum = config.optimizer == "momentum"
    for name, p in state.params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        if use_momentum:
            vel = state.velocity.get(name)
            vel = grad if vel is None else config.momentum * vel + grad
            state.velocity[name] = vel
            update = vel
        else:
            update = grad
        p.data = p.data - config.lr * update
        p.grad = None


def train_epoch(state: TrainState, dataset, config: TrainConfig) -> TrainState:
    """One pass over the dataset; returns the mutated state."""
    use_pseudo = config.enable_ema and state.epoch >= config.warmup_epochs
    masks = None
    if use_pseudo:
        refresh = ((state.epoch - config.warmup_epochs) % config.mask_every == 0
                   or state.cached_masks is None)
        if refresh:
            state.cached_masks = generate_masks(state.teacher, dataset, config)
        masks = state.cached_masks
    for sample in dataset:
        with Tape() as tape:
            out = forward(state.params, sample.audio_features, sample.visual_features)
            loss, report = total_loss(
                out, sample.video_label,
                mask=masks[sample.id] if masks is not None else None,
                enable_pseudo=use_pseudo,
                enable_cma=config.enable_cma,
                tau_a=config.tau_a, tau_v=config.tau_v,
                pseudo_weight=config.pseudo_weight, cma_weight=config.cma_weight,
            )
        if not np.isfinite(report.l_total):
            raise TrainingDivergedError(sample.id, report)
        backward(tape, loss)
        _sgd_step(state, config)
        state.step += 1
        if config.enable_ema and state.step % config.ema_every == 0:
            ema_update(state.teacher, state.params)
        state.history.append(report)
    state.epoch += 1
    return state


def train(model_config: ModelConfig, train_config: TrainConfig, dataset,
          progress=None) -> TrainState:
    """Full run; `progress` (if given) is called with a line per epoch."""
    state = init_train_state(model_config, train_config)
    for _ in range(train_config.epochs):
        train_epoch(state, dataset, train_config)
        if progress is not None:
            recent = state.history[-len(dataset):]
            mean_total = float(np.mean([r.l_total for r in recent]))
            progress(f"epoch {state.epoch}/{train_config.epochs} "
                     f"mean_loss {mean_total:.6f} steps {state.step}")
    return state


def predict_sample(params: ModelParams, sample, threshold=0.5) -> metrics.SegmentLabels:
    with no_tape():
        out = forward(params, sample.audio_features, sample.visual_features)
    return metrics.SegmentLabels(
        metrics.binarize(out.p_audio.data, threshold),
        metrics.binarize(out.p_visual.data, threshold),
    )


def evaluate(state: TrainState, dataset, threshold=0.5) -> metrics.MetricReport:
    """Student-only evaluation against the dataset's segment ground truth."""
    scores = []
    for sample in dataset:
        pred = predict_sample(state.params, sample, threshold)
        scores.append(metrics.evaluate_video(pred, sample.segment_gt))
    return metrics.aggregate(scores)


def write_history_csv(history, path):
    lines = [LossReport.CSV_HEADER]
    lines.extend(report.csv_row(step) for step, report in enumerate(history))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
