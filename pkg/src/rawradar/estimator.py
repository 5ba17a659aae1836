"""scikit-learn style front door to the training harness."""

from __future__ import annotations

import dataclasses
import logging
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ContractError, ShapeError
from .metrics import EvalReport
from .sim import Scene
from .training import (
    RunConfig,
    TrainState,
    detections_from_grids,
    evaluate_model,
    load_run,
    predict_grids,
    save_run,
    train,
)

log = logging.getLogger(__name__)

_RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


class RadarDetector(BaseEstimator):
    """Object detector trained on raw ADC frames.

    ``X`` is always a complex array of ADC frames ``(B, N, chirps, V)``; the
    configured ``input_mode`` decides whether the network sees them directly
    (``ADC``) or through the FFT pipeline (``RD``, ``RAD``).  ``y`` is a
    sequence of :class:`~rawradar.sim.Scene`.

    Parameters mirror :class:`~rawradar.training.RunConfig`; ``run_dir``
    (optional) receives checkpoints and the metric log.
    """

    def __init__(self, preset: str = "desk", input_mode: str = "ADC", window: bool = True,
                 shift: bool = True, nonlinearity: bool = False, epochs: int = 30, batch_size: int = 0,
                 lr: float = 1e-4, lr_decay: float = 0.9, decay_every: int = 10, clip_norm: float = 10.0,
                 alpha: float = 2.0, beta: float = 1e2, gamma: float = 1e5, lam: float = 1e2,
                 threshold: float = 0.3, nms_range: float = 2.0, nms_angle: float = 5.0,
                 match_range: float = 2.0, match_angle: float = 5.0, seed: int = 0, run_dir=None,
                 verbose: bool = False):
        self.preset = preset
        self.input_mode = input_mode
        self.window = window
        self.shift = shift
        self.nonlinearity = nonlinearity
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.clip_norm = clip_norm
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lam = lam
        self.threshold = threshold
        self.nms_range = nms_range
        self.nms_angle = nms_angle
        self.match_range = match_range
        self.match_angle = match_angle
        self.seed = seed
        self.run_dir = run_dir
        self.verbose = verbose

    def run_config(self) -> RunConfig:
        kw = {k: v for k, v in self.get_params().items() if k in _RUN_FIELDS}
        return RunConfig(**kw)

    def _check_frames(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim == 3:
            X = X[None]
        if X.ndim != 4:
            raise ShapeError(f"expected ADC frames (B, N, chirps, V), got shape {X.shape}")
        if not np.iscomplexobj(X):
            raise ContractError("ADC frames must be complex")
        want = self.run_config().radar().frame_shape
        if X.shape[1:] != want:
            raise ShapeError(f"preset {self.preset!r} frames are {want}, got {X.shape[1:]}")
        if not np.all(np.isfinite(X)):
            raise ContractError("ADC frames contain non-finite samples")
        return X

    @staticmethod
    def _check_scenes(y, n: int) -> list[Scene]:
        y = list(y)
        if len(y) != n:
            raise ContractError(f"{n} frames but {len(y)} scenes")
        if not all(isinstance(s, Scene) for s in y):
            raise ContractError("labels must be Scene objects")
        return y

    def fit(self, X, y: Sequence[Scene], X_val=None, y_val=None) -> "RadarDetector":
        cfg = self.run_config()
        X = self._check_frames(X)
        y = self._check_scenes(y, len(X))
        if X_val is not None:
            X_val = self._check_frames(X_val)
            y_val = self._check_scenes(y_val, len(X_val))
        log_fn = print if self.verbose else log.info
        state = train(cfg, X, y, X_val, y_val, run_dir=self.run_dir, log_fn=log_fn)
        self._set_state(state)
        return self

    def _set_state(self, state: TrainState) -> None:
        self.state_ = state
        self.model_ = state.model
        self.pipeline_ = state.pipeline
        self.history_ = state.history
        self.best_epoch_ = state.best["epoch"]

    def predict_grids(self, X) -> dict[str, np.ndarray]:
        check_is_fitted(self, "model_")
        return predict_grids(self.model_, self.pipeline_.transform(self._check_frames(X)),
                             self.run_config().effective_batch)

    def predict(self, X) -> list:
        """One list of :class:`~rawradar.heads.Detection` per frame."""
        grids = self.predict_grids(X)
        return detections_from_grids(grids, self.model_.radar, self.run_config())

    def evaluate(self, X, y: Sequence[Scene]) -> EvalReport:
        check_is_fitted(self, "model_")
        X = self._check_frames(X)
        y = self._check_scenes(y, len(X))
        report, _ = evaluate_model(self.model_, self.pipeline_.transform(X), y, self.run_config())
        return report

    def score(self, X, y: Sequence[Scene]) -> float:
        """Detection F1 at the configured gates."""
        return self.evaluate(X, y).F1

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_run(path, self.state_)

    @classmethod
    def load(cls, path) -> "RadarDetector":
        state = load_run(path)
        kw = {k: v for k, v in dataclasses.asdict(state.config).items()
              if k in cls._get_param_names()}
        est = cls(**kw)
        est._set_state(state)
        return est
