"""Synthetic desk-scale datasets with planted events and full segment truth.

Each class gets one fixed random prototype direction per modality. A
planted event adds that prototype to the affected modality's features over
its span; audio-visual events hit both modalities. Background is Gaussian
noise, so at sigma=0 features are exact prototype sums and a linear probe
recovers the segment labels perfectly. Generation is per-video seeded, so
datasets are byte-reproducible and videos are independent of n_videos.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from .metrics import SegmentLabels

AUDIO_ONLY = 0
VISUAL_ONLY = 1
BOTH = 2

_PROTO_STREAM = 2**31  # reserved per-dataset stream id, distinct from video indices


class DatasetFormatError(ValueError):
    """A dataset file failed to parse."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class GenConfig:
    n_videos: int = 200
    T: int = 10
    C: int = 5
    d_a: int = 16
    d_v: int = 16
    events_min: int = 1
    events_max: int = 3
    mix_audio: float = 0.1
    mix_visual: float = 0.1
    mix_av: float = 0.8
    sigma: float = 0.3
    prototype_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_videos, self.T, self.C, self.d_a, self.d_v) < 1:
            raise ValueError("n_videos and all dimensions must be >= 1")
        if not 1 <= self.events_min <= self.events_max:
            raise ValueError("need 1 <= events_min <= events_max")
        total = self.mix_audio + self.mix_visual + self.mix_av
        if abs(total - 1.0) > 1e-9 or min(self.mix_audio, self.mix_visual, self.mix_av) < 0:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class VideoSample:
    id: str
    audio_features: np.ndarray   # (T, d_a)
    visual_features: np.ndarray  # (T, d_v)
    video_label: np.ndarray      # (C,) binary
    segment_gt: SegmentLabels


@dataclass
class Dataset:
    videos: list
    T: int
    C: int
    d_a: int
    d_v: int

    def __len__(self):
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    def __getitem__(self, idx):
        return self.videos[idx]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.videos[i] for i in indices], self.T, self.C, self.d_a, self.d_v)


def class_prototypes(config: GenConfig):
    """Fixed unit directions per (class, modality), scaled by prototype_scale."""
    rng = np.random.default_rng([config.seed, _PROTO_STREAM])
    proto_a = rng.normal(size=(config.C, config.d_a))
    proto_v = rng.normal(size=(config.C, config.d_v))
    proto_a *= config.prototype_scale / np.linalg.norm(proto_a, axis=1, keepdims=True)
    proto_v *= config.prototype_scale / np.linalg.norm(proto_v, axis=1, keepdims=True)
    return proto_a, proto_v


def _plant_video(config: GenConfig, index, proto_a, proto_v) -> VideoSample:
    rng = np.random.default_rng([config.seed, index])
    T, C = config.T, config.C
    audio = rng.normal(0.0, config.sigma, size=(T, config.d_a))
    visual = rng.normal(0.0, config.sigma, size=(T, config.d_v))
    gt_a = np.zeros((T, C), dtype=np.int64)
    gt_v = np.zeros((T, C), dtype=np.int64)
    max_len = max(1, T // 2)
    n_events = int(rng.integers(config.events_min, config.events_max + 1))
    for _ in range(n_events):
        c = int(rng.integers(C))
        kind = int(rng.choice(3, p=[config.mix_audio, config.mix_visual, config.mix_av]))
        length = int(rng.integers(1, max_len + 1))
        onset = int(rng.integers(0, T - length + 1))
        span = slice(onset, onset + length)
        if kind in (AUDIO_ONLY, BOTH):
            audio[span] += proto_a[c]
            gt_a[span, c] = 1
        if kind in (VISUAL_ONLY, BOTH):
            visual[span] += proto_v[c]
            gt_v[span, c] = 1
    label = ((gt_a.any(axis=0)) | (gt_v.any(axis=0))).astype(np.int64)
    return VideoSample(
        id=f"vid_{index:05d}",
        audio_features=audio,
        visual_features=visual,
        video_label=label,
        segment_gt=SegmentLabels(gt_a, gt_v),
    )


def generate(config: GenConfig) -> Dataset:
    proto_a, proto_v = class_prototypes(config)
    videos = [_plant_video(config, i, proto_a, proto_v) for i in range(config.n_videos)]
    return Dataset(videos, config.T, config.C, config.d_a, config.d_v)


# ---------------------------------------------------------------------------
# dataset files

DATASET_MAGIC = "AVPARSE-DATASET"
DATASET_VERSION = 1
ENCODINGS = ("text", "binary")


def _encode_matrix(arr, encoding):
    if encoding == "text":
        return [" ".join(repr(float(v)) for v in row) for row in arr]
    packed = base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return ["b64 " + packed.decode("ascii")]


def save_dataset(dataset: Dataset, path, encoding="text"):
    """Write a dataset; both encodings round-trip float64 exactly."""
    if encoding not in ENCODINGS:
        raise ValueError(f"encoding must be one of {ENCODINGS}, got {encoding!r}")
    lines = [
        f"{DATASET_MAGIC} v{DATASET_VERSION}",
        f"encoding {encoding}",
        f"n_videos {len(dataset)}",
        f"T {dataset.T}",
        f"C {dataset.C}",
        f"d_a {dataset.d_a}",
        f"d_v {dataset.d_v}",
    ]
    for v in dataset:
        lines.append(f"video {v.id}")
        lines.append("label " + "".join(str(int(x)) for x in v.video_label))
        lines.append("audio")
        lines.extend(_encode_matrix(v.audio_features, encoding))
        lines.append("visual")
        lines.extend(_encode_matrix(v.visual_features, encoding))
        lines.append("gt-audio")
        lines.extend("".join(str(int(x)) for x in row) for row in v.segment_gt.audio)
        lines.append("gt-visual")
        lines.extend("".join(str(int(x)) for x in row) for row in v.segment_gt.visual)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


class _Reader:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.lines):
            raise DatasetFormatError(f"unexpected end of file while reading {what}",
                                     line=len(self.lines))
        self.pos += 1
        return self.lines[self.pos - 1]

    def expect(self, token):
        line = self.next(repr(token))
        if line != token:
            raise DatasetFormatError(f"expected {token!r}, got {line!r}", line=self.pos)

    def keyed(self, key):
        line = self.next(key)
        parts = line.split(maxsplit=1)
        if len(parts) != 2 or parts[0] != key:
            raise DatasetFormatError(f"expected '{key} <value>', got {line!r}", line=self.pos)
        return parts[1]


def _decode_matrix(reader, rows, cols, encoding, what):
    if encoding == "binary":
        line = reader.next(what)
        if not line.startswith("b64 "):
            raise DatasetFormatError(f"expected base64 row for {what}, got {line!r}", line=reader.pos)
        try:
            raw = base64.b64decode(line[4:], validate=True)
        except Exception:
            raise DatasetFormatError(f"invalid base64 payload for {what}", line=reader.pos) from None
        if len(raw) != rows * cols * 8:
            raise DatasetFormatError(
                f"{what} payload has {len(raw)} bytes, expected {rows * cols * 8}", line=reader.pos)
        return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)
    out = np.empty((rows, cols), dtype=np.float64)
    for r in range(rows):
        line = reader.next(what)
        parts = line.split()
        if len(parts) != cols:
            raise DatasetFormatError(
                f"{what} row has {len(parts)} values, expected {cols}", line=reader.pos)
        try:
            out[r] = [float(p) for p in parts]
        except ValueError:
            raise DatasetFormatError(f"bad float in {what} row: {line!r}", line=reader.pos) from None
    return out


def _decode_binary_grid(reader, rows, cols, what):
    out = np.empty((rows, cols), dtype=np.int64)
    for r in range(rows):
        line = reader.next(what)
        if len(line) != cols or set(line) - {"0", "1"}:
            raise DatasetFormatError(f"bad {what} row {line!r}", line=reader.pos)
        out[r] = [int(ch) for ch in line]
    return out


def load_dataset(path) -> Dataset:
    with open(path, encoding="ascii") as fh:
        reader = _Reader(fh.read().splitlines())
    magic = reader.next("header")
    if not magic.startswith(DATASET_MAGIC):
        raise DatasetFormatError("not a dataset file (bad magic)", line=1)
    if magic != f"{DATASET_MAGIC} v{DATASET_VERSION}":
        raise DatasetFormatError(f"unsupported dataset version {magic!r}", line=1)
    encoding = reader.keyed("encoding")
    if encoding not in ENCODINGS:
        raise DatasetFormatError(f"unknown encoding {encoding!r}", line=reader.pos)
    n_videos = int(reader.keyed("n_videos"))
    T = int(reader.keyed("T"))
    C = int(reader.keyed("C"))
    d_a = int(reader.keyed("d_a"))
    d_v = int(reader.keyed("d_v"))
    videos = []
    for _ in range(n_videos):
        vid = reader.keyed("video")
        label_str = reader.keyed("label")
        if len(label_str) != C or set(label_str) - {"0", "1"}:
            raise DatasetFormatError(f"bad label {label_str!r}", line=reader.pos)
        label = np.array([int(ch) for ch in label_str], dtype=np.int64)
        reader.expect("audio")
        audio = _decode_matrix(reader, T, d_a, encoding, "audio features")
        reader.expect("visual")
        visual = _decode_matrix(reader, T, d_v, encoding, "visual features")
        reader.expect("gt-audio")
        gt_a = _decode_binary_grid(reader, T, C, "gt-audio")
        reader.expect("gt-visual")
        gt_v = _decode_binary_grid(reader, T, C, "gt-visual")
        videos.append(VideoSample(vid, audio, visual, label, SegmentLabels(gt_a, gt_v)))
    if reader.pos != len(reader.lines):
        raise DatasetFormatError("trailing content after last video", line=reader.pos + 1)
    return Dataset(videos, T, C, d_a, d_v)
