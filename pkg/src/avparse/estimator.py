"""Scikit-learn style front end for the parser.

AudioVisualParser wraps the whole pipeline behind fit/predict/score so it
composes with estimator tooling (get_params, set_params, clone). X is a
Dataset or a sequence of VideoSample records; there is no separate y, the
weak labels travel with the samples.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from . import metrics, trainer
from .model import ModelConfig, forward
from .tensor import no_tape
from .validation import as_dataset


class AudioVisualParser(BaseEstimator):
    """Weakly-supervised audio-visual segment classifier.

    fit() trains from video-level labels only; predict() returns per-video
    SegmentLabels (binary audio/visual grids, the joint grid derived);
    score() is the dataset's segment-level Type@AV against segment truth.
    """

    def __init__(self, d_model=64, n_heads=4, epochs=20, lr=0.05, optimizer="sgd",
                 momentum=0.9, enable_ema=True, enable_cma=True, alpha=0.999,
                 mask_mode="adaptive", gamma=2.0, k=3, tau_a=0.5, tau_v=0.5,
                 label_gate=True, warmup_epochs=1, ema_every=1, mask_every=1,
                 threshold=0.5, seed=0):
        self.d_model = d_model
        self.n_heads = n_heads
        self.epochs = epochs
        self.lr = lr
        self.optimizer = optimizer
        self.momentum = momentum
        self.enable_ema = enable_ema
        self.enable_cma = enable_cma
        self.alpha = alpha
        self.mask_mode = mask_mode
        self.gamma = gamma
        self.k = k
        self.tau_a = tau_a
        self.tau_v = tau_v
        self.label_gate = label_gate
        self.warmup_epochs = warmup_epochs
        self.ema_every = ema_every
        self.mask_every = mask_every
        self.threshold = threshold
        self.seed = seed

    def _train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            epochs=self.epochs, lr=self.lr, optimizer=self.optimizer,
            momentum=self.momentum, alpha=self.alpha, mask_mode=self.mask_mode,
            gamma=self.gamma, k=self.k, tau_a=self.tau_a, tau_v=self.tau_v,
            enable_ema=self.enable_ema, enable_cma=self.enable_cma,
            label_gate=self.label_gate, warmup_epochs=self.warmup_epochs,
            ema_every=self.ema_every, mask_every=self.mask_every,
            seed=self.seed)

    def fit(self, X, y=None):
        ds = as_dataset(X)
        model_config = ModelConfig(T=ds.T, C=ds.C, d_a=ds.d_a, d_v=ds.d_v,
                                   d_model=self.d_model, n_heads=self.n_heads,
                                   seed=self.seed)
        state = trainer.train(model_config, self._train_config(), ds)
        self.model_config_ = model_config
        self.state_ = state
        self.history_ = state.history
        return self

    def _require_fitted(self):
        if not hasattr(self, "state_"):
            raise RuntimeError("this AudioVisualParser instance is not fitted yet")

    def _check_dims(self, ds):
        cfg = self.model_config_
        if (ds.T, ds.C, ds.d_a, ds.d_v) != (cfg.T, cfg.C, cfg.d_a, cfg.d_v):
            raise ValueError(
                f"data dims (T={ds.T}, C={ds.C}, d_a={ds.d_a}, d_v={ds.d_v}) do not match "
                f"the fitted model (T={cfg.T}, C={cfg.C}, d_a={cfg.d_a}, d_v={cfg.d_v})")

    def predict(self, X):
        """Binary SegmentLabels per video, thresholded at self.threshold."""
        self._require_fitted()
        ds = as_dataset(X)
        self._check_dims(ds)
        return [trainer.predict_sample(self.state_.params, s, self.threshold) for s in ds]

    def predict_proba(self, X):
        """Per video, the (audio, visual) probability grids as arrays."""
        self._require_fitted()
        ds = as_dataset(X)
        self._check_dims(ds)
        out = []
        for s in ds:
            with no_tape():
                fwd = forward(self.state_.params, s.audio_features, s.visual_features)
            out.append((fwd.p_audio.data.copy(), fwd.p_visual.data.copy()))
        return out

    def report(self, X) -> metrics.MetricReport:
        """Full ten-number metric report against segment-level ground truth."""
        self._require_fitted()
        ds = as_dataset(X)
        self._check_dims(ds)
        return trainer.evaluate(self.state_, ds, self.threshold)

    def score(self, X, y=None) -> float:
        """Segment-level Type@AV in [0, 1]."""
        return self.report(X).segment_type_at_av
