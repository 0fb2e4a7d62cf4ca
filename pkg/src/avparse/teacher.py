"""EMA teacher: smoothed parameter copy and segment-level pseudo masks.

The teacher shares the student architecture but is never touched by the
optimizer; after every student step its parameters move by an exponential
moving average toward the student. Its fused predictions are turned into
binary trust masks either by a per-class adaptive threshold (a scale
factor times the class's mean confidence over segments) or by keeping the
top-k most confident segments per class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, forward, fuse_probs
from .tensor import no_tape

ADAPTIVE = "adaptive"
TOPK = "topk"


@dataclass
class TeacherState:
    params: ModelParams
    alpha: float
    update_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")


@dataclass(frozen=True)
class PseudoMask:
    """Binary (T, C) grid of trusted segment-class pairs."""
    grid: np.ndarray
    source: str            # "adaptive" | "topk"
    param: float           # gamma or k, whichever generated the mask

    @property
    def count(self) -> int:
        return int(self.grid.sum())

    def as_text(self) -> str:
        return "\n".join("".join(str(int(v)) for v in row) for row in self.grid)


def init_teacher(student: ModelParams, alpha: float = 0.999) -> TeacherState:
    """Teacher starts as an exact copy of the student."""
    return TeacherState(params=student.copy(), alpha=alpha)


def ema_update(teacher: TeacherState, student: ModelParams) -> TeacherState:
    """Move every teacher coordinate to alpha*old + (1-alpha)*student."""
    if teacher.params.spec() != student.spec():
        raise ValueError("teacher and student parameter layouts differ")
    a = teacher.alpha
    for tt, st in zip(teacher.params.tensors(), student.tensors()):
        tt.data = a * tt.data + (1.0 - a) * st.data
    teacher.update_count += 1
    return teacher


def teacher_predict(teacher: TeacherState, audio_features, visual_features) -> np.ndarray:
    """Fused (T, C) probability grid from a tape-less teacher forward pass."""
    with no_tape():
        out = forward(teacher.params, audio_features, visual_features)
        fused = fuse_probs(out.p_audio, out.p_visual)
    return fused.data.copy()


def _label_vector(video_label, C):
    y = np.asarray(video_label).reshape(-1)
    if y.shape != (C,):
        raise ValueError(f"video label has shape {y.shape}, expected ({C},)")
    return y != 0


def adaptive_threshold_mask(probs, gamma, video_label, label_gate=True) -> PseudoMask:
    """Keep (t, c) where prob >= gamma * mean confidence of class c.

    With label gating (default), classes absent from the video-level label
    are zeroed so the pseudo targets never contradict the weak labels.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValueError(f"probability grid must be (T, C) with T >= 1, got shape {probs.shape}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    tau = gamma * probs.mean(axis=0)
    grid = (probs >= tau[None, :]).astype(np.int64)
    if label_gate:
        grid *= _label_vector(video_label, probs.shape[1])[None, :].astype(np.int64)
    return PseudoMask(grid=grid, source=ADAPTIVE, param=float(gamma))


def topk_mask(probs, k, video_label, label_gate=True) -> PseudoMask:
    """Keep the min(k, T) most confident segments per labeled class.

    Ties break toward the smaller segment index (stable sort).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValueError(f"probability grid must be (T, C) with T >= 1, got shape {probs.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    T, C = probs.shape
    active = _label_vector(video_label, C) if label_gate else np.ones(C, dtype=bool)
    grid = np.zeros((T, C), dtype=np.int64)
    kk = min(int(k), T)
    for c in range(C):
        if not active[c]:
            continue
        order = np.argsort(-probs[:, c], kind="stable")[:kk]
        grid[order, c] = 1
    return PseudoMask(grid=grid, source=TOPK, param=float(k))
