"""Segment- and event-level F1 for audio, visual, and audio-visual events.

Segment level compares binary (T, C) grids cell by cell. Event level
merges consecutive positive segments into spans and greedily matches
predictions to ground truth in descending-IoU order, one to one, counting
a match only when IoU exceeds the threshold (0.5 by default). The joint
audio-visual grid is always recomputed as the elementwise AND of the two
modality grids, never stored. A video with no events of a type, predicted
as such, scores F1 = 1 for that type.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AUDIO = "audio"
VISUAL = "visual"
AUDIO_VISUAL = "audio-visual"


class GridFileError(ValueError):
    """A grid file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class EventSpan:
    """Half-open [onset, offset) run of positive segments for one class."""
    class_idx: int
    onset: int
    offset: int
    modality: str

    def __post_init__(self):
        if not 0 <= self.onset < self.offset:
            raise ValueError(f"invalid span [{self.onset}, {self.offset})")


def _binary_grid(arr, name):
    grid = np.asarray(arr)
    if grid.ndim != 2:
        raise ValueError(f"{name} grid must be 2-D, got shape {grid.shape}")
    vals = np.unique(grid)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError(f"{name} grid must be binary")
    return grid.astype(np.int64)


class SegmentLabels:
    """Per-modality binary (T, C) grids; the joint grid is derived."""

    def __init__(self, audio, visual):
        self.audio = _binary_grid(audio, "audio")
        self.visual = _binary_grid(visual, "visual")
        if self.audio.shape != self.visual.shape:
            raise ValueError(
                f"audio grid {self.audio.shape} and visual grid {self.visual.shape} differ")

    @property
    def audio_visual(self):
        return self.audio * self.visual

    @property
    def T(self):
        return self.audio.shape[0]

    @property
    def C(self):
        return self.audio.shape[1]

    def grid(self, kind):
        if kind == AUDIO:
            return self.audio
        if kind == VISUAL:
            return self.visual
        if kind in (AUDIO_VISUAL, "av"):
            return self.audio_visual
        raise ValueError(f"unknown grid kind {kind!r}")


def binarize(probs, threshold=0.5):
    """Probability grid to binary grid; 1 where prob >= threshold."""
    probs = np.asarray(probs, dtype=np.float64)
    return (probs >= threshold).astype(np.int64)


def merge_events(column, class_idx, modality):
    """Maximal runs of 1s in a binary column become EventSpans."""
    col = np.asarray(column).reshape(-1)
    if col.size < 1:
        raise ValueError("merge_events: column must have at least one segment")
    spans = []
    onset = None
    for t, v in enumerate(col):
        if v and onset is None:
            onset = t
        elif not v and onset is not None:
            spans.append(EventSpan(class_idx, onset, t, modality))
            onset = None
    if onset is not None:
        spans.append(EventSpan(class_idx, onset, col.size, modality))
    return spans


def grid_events(grid, modality):
    """All spans of a (T, C) binary grid, per class."""
    grid = np.asarray(grid)
    spans = []
    for c in range(grid.shape[1]):
        spans.extend(merge_events(grid[:, c], c, modality))
    return spans


def span_iou(a: EventSpan, b: EventSpan) -> float:
    inter = max(0, min(a.offset, b.offset) - max(a.onset, b.onset))
    union = (a.offset - a.onset) + (b.offset - b.onset) - inter
    return inter / union


def _f1(tp, fp, fn):
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    return float(2.0 * tp / (2.0 * tp + fp + fn))


def segment_counts(pred_grid, gt_grid):
    p = np.asarray(pred_grid) != 0
    g = np.asarray(gt_grid) != 0
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    return tp, fp, fn


def segment_f1(pred: SegmentLabels, gt: SegmentLabels, kind=AUDIO) -> float:
    """Cell-by-cell F1 over the chosen grid type."""
    if (pred.T, pred.C) != (gt.T, gt.C):
        raise ValueError(f"prediction ({pred.T}, {pred.C}) and ground truth ({gt.T}, {gt.C}) differ")
    return _f1(*segment_counts(pred.grid(kind), gt.grid(kind)))


def match_events(pred_spans, gt_spans, iou_threshold=0.5):
    """Greedy one-to-one matching per class, descending IoU; returns (tp, fp, fn).

    A predicted span counts as TP when matched to an unmatched ground-truth
    span of the same class with IoU strictly above the threshold.
    """
    classes = {s.class_idx for s in pred_spans} | {s.class_idx for s in gt_spans}
    tp = 0
    for c in sorted(classes):
        preds = [s for s in pred_spans if s.class_idx == c]
        gts = [s for s in gt_spans if s.class_idx == c]
        candidates = []
        for i, p in enumerate(preds):
            for j, g in enumerate(gts):
                iou = span_iou(p, g)
                if iou > iou_threshold:
                    candidates.append((-iou, i, j))
        candidates.sort()
        used_p, used_g = set(), set()
        for _, i, j in candidates:
            if i in used_p or j in used_g:
                continue
            used_p.add(i)
            used_g.add(j)
            tp += 1
    fp = len(pred_spans) - tp
    fn = len(gt_spans) - tp
    return tp, fp, fn


def event_f1(pred_spans, gt_spans, iou_threshold=0.5) -> float:
    return _f1(*match_events(pred_spans, gt_spans, iou_threshold))


@dataclass(frozen=True)
class VideoScores:
    """Per-video F1 values; the pooled fields combine audio and visual counts."""
    segment_audio: float
    segment_visual: float
    segment_av: float
    segment_pooled: float
    event_audio: float
    event_visual: float
    event_av: float
    event_pooled: float


def evaluate_video(pred: SegmentLabels, gt: SegmentLabels, iou_threshold=0.5) -> VideoScores:
    if (pred.T, pred.C) != (gt.T, gt.C):
        raise ValueError(f"prediction ({pred.T}, {pred.C}) and ground truth ({gt.T}, {gt.C}) differ")
    seg = {}
    counts = {}
    for kind in (AUDIO, VISUAL, AUDIO_VISUAL):
        c = segment_counts(pred.grid(kind), gt.grid(kind))
        counts[kind] = c
        seg[kind] = _f1(*c)
    pooled_seg = _f1(*(np.add(counts[AUDIO], counts[VISUAL])))

    ev = {}
    ev_counts = {}
    for kind in (AUDIO, VISUAL, AUDIO_VISUAL):
        modality = kind
        c = match_events(
            grid_events(pred.grid(kind), modality),
            grid_events(gt.grid(kind), modality),
            iou_threshold)
        ev_counts[kind] = c
        ev[kind] = _f1(*c)
    pooled_ev = _f1(*(np.add(ev_counts[AUDIO], ev_counts[VISUAL])))

    return VideoScores(
        segment_audio=seg[AUDIO], segment_visual=seg[VISUAL], segment_av=seg[AUDIO_VISUAL],
        segment_pooled=pooled_seg,
        event_audio=ev[AUDIO], event_visual=ev[VISUAL], event_av=ev[AUDIO_VISUAL],
        event_pooled=pooled_ev,
    )


@dataclass(frozen=True)
class MetricReport:
    """Dataset-level averages, each in [0, 1]."""
    segment_audio: float
    segment_visual: float
    segment_av: float
    segment_type_at_av: float
    segment_event_at_av: float
    event_audio: float
    event_visual: float
    event_av: float
    event_type_at_av: float
    event_event_at_av: float

    def rows(self):
        return [
            ("segment", self.segment_audio, self.segment_visual, self.segment_av,
             self.segment_type_at_av, self.segment_event_at_av),
            ("event", self.event_audio, self.event_visual, self.event_av,
             self.event_type_at_av, self.event_event_at_av),
        ]

    def table(self) -> str:
        lines = [f"{'level':<8} {'A':>7} {'V':>7} {'AV':>7} {'Type@AV':>8} {'Event@AV':>9}"]
        for name, *vals in self.rows():
            cells = " ".join(f"{100.0 * v:>{w}.2f}" for v, w in zip(vals, (7, 7, 7, 8, 9)))
            lines.append(f"{name:<8} {cells}")
        return "\n".join(lines)

    def csv(self) -> str:
        lines = ["level,a,v,av,type_at_av,event_at_av"]
        for name, *vals in self.rows():
            lines.append(name + "," + ",".join(repr(v) for v in vals))
        return "\n".join(lines)


def aggregate(video_scores) -> MetricReport:
    """Average per-video F1s; Type@AV is the mean of the A, V, AV averages."""
    scores = list(video_scores)
    if not scores:
        raise ValueError("aggregate: no videos")

    def avg(attr):
        return float(np.mean([getattr(s, attr) for s in scores]))

    seg_a, seg_v, seg_av = avg("segment_audio"), avg("segment_visual"), avg("segment_av")
    ev_a, ev_v, ev_av = avg("event_audio"), avg("event_visual"), avg("event_av")
    return MetricReport(
        segment_audio=seg_a, segment_visual=seg_v, segment_av=seg_av,
        segment_type_at_av=(seg_a + seg_v + seg_av) / 3.0,
        segment_event_at_av=avg("segment_pooled"),
        event_audio=ev_a, event_visual=ev_v, event_av=ev_av,
        event_type_at_av=(ev_a + ev_v + ev_av) / 3.0,
        event_event_at_av=avg("event_pooled"),
    )


# ---------------------------------------------------------------------------
# grid files: one record per video, A and V grids stored, AV derived

GRIDS_MAGIC = "AVPARSE-GRIDS"
GRIDS_VERSION = 1


def save_grid_file(path, records):
    """records: iterable of (video_id, SegmentLabels)."""
    lines = [f"{GRIDS_MAGIC} v{GRIDS_VERSION}"]
    for vid, labels in records:
        lines.append(f"video {vid} {labels.T} {labels.C}")
        for name in (AUDIO, VISUAL):
            lines.append(name)
            grid = labels.grid(name)
            for row in grid:
                lines.append("".join(str(int(v)) for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grid_file(path):
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"{GRIDS_MAGIC} v{GRIDS_VERSION}":
        raise GridFileError("bad or missing grid file header", line=1)
    records = []
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "video":
            raise GridFileError(f"expected 'video <id> <T> <C>', got {lines[i]!r}", line=i + 1)
        vid, T, C = parts[1], int(parts[2]), int(parts[3])
        i += 1
        grids = {}
        for name in (AUDIO, VISUAL):
            if i >= len(lines) or lines[i] != name:
                raise GridFileError(f"expected {name!r} marker", line=i + 1)
            i += 1
            if i + T > len(lines):
                raise GridFileError(f"truncated {name} grid for video {vid}", line=len(lines))
            rows = []
            for r in range(T):
                row = lines[i + r]
                if len(row) != C or set(row) - {"0", "1"}:
                    raise GridFileError(f"bad grid row {row!r}", line=i + r + 1)
                rows.append([int(ch) for ch in row])
            grids[name] = np.array(rows, dtype=np.int64)
            i += T
        records.append((vid, SegmentLabels(grids[AUDIO], grids[VISUAL])))
    return records
