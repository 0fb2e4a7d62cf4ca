"""Training objectives: video-level BCE, masked pseudo BCE, cross-modal agreement.

All probabilities are clamped to [1e-7, 1 - 1e-7] before any log. Empty
masks and empty valid-pair sets contribute zero loss rather than failing,
so early training can proceed on the video-level term alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor
from .model import ForwardOutput, fuse_probs
from .teacher import PseudoMask

PROB_CLAMP = 1e-7
COSINE_EPS = 1e-12


@dataclass(frozen=True)
class ValidPairSet:
    """Segment-class pairs where both modalities are confident and the label agrees."""
    pairs: tuple
    tau_a: float
    tau_v: float

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class LossReport:
    l_avvp: float
    l_pseudo: float
    l_cma: float
    l_total: float
    n_pairs: int
    mask_count: int

    CSV_HEADER = "step,l_avvp,l_pseudo,l_cma,l_total,n_pairs,mask_count"

    def csv_row(self, step: int) -> str:
        return (f"{step},{self.l_avvp!r},{self.l_pseudo!r},{self.l_cma!r},"
                f"{self.l_total!r},{self.n_pairs},{self.mask_count}")


def _clamped(p):
    return tn.clamp(tn.as_tensor(p), PROB_CLAMP, 1.0 - PROB_CLAMP)


def avvp_loss(p_video, video_label) -> Tensor:
    """Mean binary cross-entropy between video-level predictions and weak labels."""
    y = np.asarray(video_label, dtype=np.float64).reshape(-1)
    p = _clamped(p_video)
    if p.data.shape != y.shape:
        raise tn.ShapeError(f"avvp_loss: prediction shape {p.data.shape} vs label shape {y.shape}")
    term = Tensor(y) * tn.log(p) + Tensor(1.0 - y) * tn.log(1.0 - p)
    return -tn.mean(term)


def pseudo_loss(p_fused, mask) -> Tensor:
    """Masked BCE toward target 1, averaged over the masked cells.

    Gradient flows only through masked positions; an all-zero mask yields
    a constant 0.
    """
    grid = mask.grid if isinstance(mask, PseudoMask) else np.asarray(mask)
    p_fused = tn.as_tensor(p_fused)
    if p_fused.data.shape != grid.shape:
        raise tn.ShapeError(
            f"pseudo_loss: prediction shape {p_fused.data.shape} vs mask shape {grid.shape}")
    count = int(grid.sum())
    if count == 0:
        return Tensor(0.0)
    weights = Tensor(grid.astype(np.float64))
    return tn.sum(weights * -tn.log(_clamped(p_fused))) * (1.0 / count)


def select_valid_pairs(p_audio, p_visual, video_label, tau_a=0.5, tau_v=0.5) -> ValidPairSet:
    """Pairs (t, c) with both modality confidences strictly above their
    thresholds and class c present in the video-level label, ordered by (t, c)."""
    pa = p_audio.data if isinstance(p_audio, Tensor) else np.asarray(p_audio)
    pv = p_visual.data if isinstance(p_visual, Tensor) else np.asarray(p_visual)
    if pa.shape != pv.shape:
        raise tn.ShapeError(f"select_valid_pairs: shapes {pa.shape} and {pv.shape} differ")
    y = np.asarray(video_label).reshape(-1) != 0
    keep = (pa > tau_a) & (pv > tau_v) & y[None, :]
    pairs = tuple((int(t), int(c)) for t, c in np.argwhere(keep))
    return ValidPairSet(pairs=pairs, tau_a=float(tau_a), tau_v=float(tau_v))


def cma_loss(emb_audio, emb_visual, pairs: ValidPairSet) -> Tensor:
    """Mean cosine distance between the modality embeddings over valid pairs.

    The cosine depends on the segment only, so a segment listed with m
    classes contributes m times. Empty pair sets yield a constant 0; the
    value always lies in [0, 2].
    """
    if len(pairs) == 0:
        return Tensor(0.0)
    emb_audio, emb_visual = tn.as_tensor(emb_audio), tn.as_tensor(emb_visual)
    if emb_audio.data.shape != emb_visual.data.shape:
        raise tn.ShapeError(
            f"cma_loss: embedding shapes {emb_audio.data.shape} and {emb_visual.data.shape} differ")
    T = emb_audio.data.shape[0]
    counts = np.zeros(T, dtype=np.float64)
    for t, _ in pairs.pairs:
        counts[t] += 1.0
    dot = tn.sum(emb_audio * emb_visual, axis=1)
    norms = tn.l2_norm(emb_audio, axis=1) * tn.l2_norm(emb_visual, axis=1)
    cos = dot / (norms + COSINE_EPS)
    return tn.sum(Tensor(counts) * (1.0 - cos)) * (1.0 / len(pairs))


def total_loss(fwd: ForwardOutput, video_label, mask=None, pairs=None, *,
               enable_pseudo=True, enable_cma=True, tau_a=0.5, tau_v=0.5,
               pseudo_weight=1.0, cma_weight=1.0):
    """Unweighted sum of the three objectives (optional weights default 1).

    Disabled terms are skipped entirely, so the baseline configuration
    reduces the tape to the video-level loss alone. `mask` and `pairs` can
    be precomputed and frozen, which gradient checking requires.
    Returns (scalar Tensor, LossReport).
    """
    l_avvp_t = avvp_loss(fwd.p_video, video_label)
    total = l_avvp_t
    l_pseudo = 0.0
    mask_count = 0
    if enable_pseudo and mask is not None:
        grid = mask.grid if isinstance(mask, PseudoMask) else np.asarray(mask)
        mask_count = int(grid.sum())
        l_pseudo_t = pseudo_loss(fuse_probs(fwd.p_audio, fwd.p_visual), grid)
        if pseudo_weight != 1.0:
            l_pseudo_t = l_pseudo_t * pseudo_weight
        l_pseudo = float(l_pseudo_t.data)
        total = total + l_pseudo_t

    l_cma = 0.0
    n_pairs = 0
    if enable_cma:
        if pairs is None:
            pairs = select_valid_pairs(fwd.p_audio, fwd.p_visual, video_label, tau_a, tau_v)
        n_pairs = len(pairs)
        l_cma_t = cma_loss(fwd.refined_audio, fwd.refined_visual, pairs)
        if cma_weight != 1.0:
            l_cma_t = l_cma_t * cma_weight
        l_cma = float(l_cma_t.data)
        total = total + l_cma_t

    report = LossReport(
        l_avvp=float(l_avvp_t.data),
        l_pseudo=l_pseudo,
        l_cma=l_cma,
        l_total=float(total.data),
        n_pairs=n_pairs,
        mask_count=mask_count,
    )
    return total, report
