"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .datagen import Dataset, VideoSample


def check_sample(sample, T, C, d_a, d_v):
    a = np.asarray(sample.audio_features)
    v = np.asarray(sample.visual_features)
    y = np.asarray(sample.video_label)
    if a.shape != (T, d_a):
        raise ValueError(f"video {sample.id}: audio features {a.shape}, expected {(T, d_a)}")
    if v.shape != (T, d_v):
        raise ValueError(f"video {sample.id}: visual features {v.shape}, expected {(T, d_v)}")
    if not (np.isfinite(a).all() and np.isfinite(v).all()):
        raise ValueError(f"video {sample.id}: features contain non-finite values")
    if y.shape != (C,) or not np.isin(y, (0, 1)).all():
        raise ValueError(f"video {sample.id}: video label must be a binary vector of length {C}")


def as_dataset(X) -> Dataset:
    """Coerce a Dataset or a sequence of VideoSamples, checking consistency."""
    if isinstance(X, Dataset):
        ds = X
    else:
        videos = list(X)
        if not videos:
            raise ValueError("empty dataset")
        first = videos[0]
        if not isinstance(first, VideoSample):
            raise TypeError(f"expected VideoSample records, got {type(first).__name__}")
        a = np.asarray(first.audio_features)
        v = np.asarray(first.visual_features)
        y = np.asarray(first.video_label)
        ds = Dataset(videos, T=a.shape[0], C=y.shape[0], d_a=a.shape[1], d_v=v.shape[1])
    if len(ds) == 0:
        raise ValueError("empty dataset")
    for sample in ds:
        check_sample(sample, ds.T, ds.C, ds.d_a, ds.d_v)
    return ds
