"""Scikit-learn style front door for the assessment model.

`IntelligibilityRegressor` wraps model construction, training, and
prediction behind the familiar fit/predict/get_params surface so the
pipeline composes with the wider ecosystem (cloning, grid search over
the flat constructor parameters, score()).

Inputs are utterance records (or a manifest path) rather than feature
matrices: the estimator owns feature extraction end to end.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .config import LossWeights, ModelConfig, TrainConfig
from .data import Manifest, UtteranceRecord, parse_manifest
from .errors import ConfigError
from .pipeline import FeatureResolver
from .providers import ProviderConfig, make_provider
from .training import load_checkpoint, save_checkpoint, train


def _as_records(x) -> list[UtteranceRecord]:
    if isinstance(x, Manifest):
        return list(x.records)
    if isinstance(x, (str, Path)):
        return list(parse_manifest(x).records)
    records = list(x)
    for r in records:
        if not isinstance(r, UtteranceRecord):
            raise ConfigError(f"expected UtteranceRecord inputs, got {type(r).__name__}")
    return records


class IntelligibilityRegressor(BaseEstimator, RegressorMixin):
    """Non-intrusive intelligibility predictor with fit/predict semantics.

    Parameters mirror the model/training configuration as flat scalars
    so `get_params`/`set_params`/`clone` behave like any other sklearn
    estimator. `fit` expects utterance records whose labels are carried
    in the records themselves; `predict` returns intelligibility scores
    on the 0-100 scale.
    """

    def __init__(
        self,
        n_fft: int = 512,
        n_filters: int = 128,
        kernel_len: int = 251,
        d_ws: int = 1280,
        heads: int = 8,
        concat_mode: str = "feature",
        layer_norm: bool = False,
        lr: float = 1e-4,
        epochs: int = 50,
        batch_size: int = 1,
        seed: int = 0,
        gamma1: float = 1.0,
        gamma2: float = 0.4,
        gamma3: float = 0.2,
        frame_loss_weight: float = 1.0,
        early_stop_patience: int = 10,
        provider: str = "surrogate",
        embedding_dir: str | None = None,
        provider_seed: int = 0,
    ):
        self.n_fft = n_fft
        self.n_filters = n_filters
        self.kernel_len = kernel_len
        self.d_ws = d_ws
        self.heads = heads
        self.concat_mode = concat_mode
        self.layer_norm = layer_norm
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.gamma3 = gamma3
        self.frame_loss_weight = frame_loss_weight
        self.early_stop_patience = early_stop_patience
        self.provider = provider
        self.embedding_dir = embedding_dir
        self.provider_seed = provider_seed

    # -- configuration assembly ----------------------------------------

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            n_fft=self.n_fft,
            n_filters=self.n_filters,
            kernel_len=self.kernel_len,
            d_ws=self.d_ws,
            heads=self.heads,
            concat_mode=self.concat_mode,
            layer_norm=self.layer_norm,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            loss_weights=LossWeights(self.gamma1, self.gamma2, self.gamma3),
            frame_loss_weight=self.frame_loss_weight,
            early_stop_patience=self.early_stop_patience,
            provider=ProviderConfig(
                kind=self.provider, d_ws=self.d_ws,
                seed=self.provider_seed, embedding_dir=self.embedding_dir,
            ),
        )

    # -- estimator surface ----------------------------------------------

    def fit(self, X, y=None, dev=None):
        """Train on utterance records (labels live in the records).

        `X` may be a Manifest, a manifest path, or a record list; `dev`
        (same forms) drives best-checkpoint selection and defaults to
        the training records.
        """
        records = _as_records(X)
        if y is not None:
            raise ConfigError("labels are carried by the records; pass y=None")
        train_manifest = Manifest(records)
        dev_manifest = Manifest(_as_records(dev)) if dev is not None else train_manifest
        result = train(self._model_config(), self._train_config(), train_manifest, dev_manifest)
        self.model_ = result.model
        self.best_epoch_ = result.best_epoch
        self.best_dev_rmse_ = result.best_dev_rmse
        self.loss_trace_ = result.loss_trace
        return self

    def _resolver(self) -> FeatureResolver:
        provider = make_provider(
            self._train_config().provider, dtype=self.model_.config.np_dtype
        )
        return FeatureResolver(self.model_.config, provider)

    def predict(self, X) -> np.ndarray:
        """Intelligibility scores (0-100), one per record."""
        self._check_fitted()
        records = _as_records(X)
        resolver = self._resolver()
        return np.array(
            [self.model_.predict(resolver.resolve(r)).intelligibility for r in records]
        )

    def predict_full(self, X) -> list:
        """Full Prediction objects (intelligibility, HASPI, class)."""
        self._check_fitted()
        records = _as_records(X)
        resolver = self._resolver()
        return [self.model_.predict(resolver.resolve(r)) for r in records]

    def score(self, X, y=None):
        """Negative RMSE against the records' own labels (higher better)."""
        records = _as_records(X)
        pred = self.predict(records)
        label = np.array([r.intelligibility for r in records])
        return -float(np.sqrt(np.mean((pred - label) ** 2)))

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> Path:
        self._check_fitted()
        return save_checkpoint(self.model_, path, self._train_config())

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "IntelligibilityRegressor":
        model, train_cfg, _, trace = load_checkpoint(path)
        mc = model.config
        est = cls(
            n_fft=mc.n_fft, n_filters=mc.n_filters, kernel_len=mc.kernel_len,
            d_ws=mc.d_ws, heads=mc.heads, concat_mode=mc.concat_mode,
            layer_norm=mc.layer_norm, lr=train_cfg.lr, epochs=train_cfg.epochs,
            batch_size=train_cfg.batch_size, seed=train_cfg.seed,
            gamma1=train_cfg.loss_weights.gamma1, gamma2=train_cfg.loss_weights.gamma2,
            gamma3=train_cfg.loss_weights.gamma3,
            frame_loss_weight=train_cfg.frame_loss_weight,
            early_stop_patience=train_cfg.early_stop_patience,
            provider=train_cfg.provider.kind,
            embedding_dir=train_cfg.provider.embedding_dir,
            provider_seed=train_cfg.provider.seed,
        )
        est.model_ = model
        est.loss_trace_ = trace
        return est

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ConfigError("estimator is not fitted; call fit() or from_checkpoint()")
