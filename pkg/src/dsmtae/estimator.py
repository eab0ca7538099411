"""scikit-learn style wrapper around the network, trainer and self-ensemble."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint as ckpt
from .ensemble import EnsembleWeights, ensemble_predict, fit_ensemble_weights
from .exceptions import ConfigurationError, MetadataError
from .losses import LossWeights
from .model import ModelConfig, Variant, build_model
from .trainer import TrainConfig, TrainState, VolumeArrays, predict_heads, set_determinism, train
from .validation import check_ages, check_sexes, check_volumes
from .volume_data.split import make_split
from .volume_data.types import AugmentationConfig


class _Labels:
    __slots__ = ("subject_id", "age", "sex")

    def __init__(self, subject_id, age, sex):
        self.subject_id, self.age, self.sex = subject_id, age, sex


class DSMTAERegressor(RegressorMixin, TransformerMixin, BaseEstimator):
    """Brain-age regressor backed by a deeply supervised multitask 3D autoencoder.

    ``X`` holds preprocessed cubic volumes, shaped ``(n, S, S, S)`` or
    ``(n, 1, S, S, S)`` with values in [0, 1]. ``fit`` takes the sex labels
    (0 female, 1 male) as a fit parameter; they are required by the
    variants with a sex task. ``transform`` returns the latent code and
    ``predict`` the (self-ensembled, when available) age.
    """

    def __init__(self, variant="DSMT_AE", block_channels=(16, 32, 64, 128, 256), supervision_depths=(2, 3, 4),
                 latent_dim=512, head_hidden=(128, 64), dropout_rate=0.3, alpha=0.3, beta=0.7, gamma=0.5,
                 eta=None, epochs=200, batch_size=4, val_batch_size=2, lr=1e-3, patience=20,
                 augmentation=None, validation_fraction=0.2, self_ensemble=True, random_state=0,
                 deterministic=True, checkpoint_dir=None, log_path=None):
        self.variant = variant
        self.block_channels = block_channels
        self.supervision_depths = supervision_depths
        self.latent_dim = latent_dim
        self.head_hidden = head_hidden
        self.dropout_rate = dropout_rate
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.eta = eta
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_batch_size = val_batch_size
        self.lr = lr
        self.patience = patience
        self.augmentation = augmentation
        self.validation_fraction = validation_fraction
        self.self_ensemble = self_ensemble
        self.random_state = random_state
        self.deterministic = deterministic
        self.checkpoint_dir = checkpoint_dir
        self.log_path = log_path

    def model_config(self, side):
        return ModelConfig(side=side, block_channels=self.block_channels,
                           supervision_depths=self.supervision_depths, latent_dim=self.latent_dim,
                           head_hidden=self.head_hidden, dropout_rate=self.dropout_rate,
                           variant=Variant.parse(self.variant)).validate()

    def train_config(self):
        aug = self.augmentation
        if isinstance(aug, dict):
            aug = AugmentationConfig(**aug)
        return TrainConfig(epochs=self.epochs, batch_train=self.batch_size, batch_val=self.val_batch_size,
                           lr0=self.lr, patience=self.patience, seed=self.random_state,
                           loss_weights=LossWeights(self.alpha, self.beta, self.gamma, self.eta),
                           augmentation=aug, deterministic=self.deterministic)

    def _split(self, X, y, sex):
        n = X.shape[0]
        labels = [_Labels(i, y[i], sex[i]) for i in range(n)]
        split = make_split(labels, self.validation_fraction, rng_seed=self.random_state)
        if not split.val_ids or not split.train_ids:
            raise ConfigurationError("validation_fraction leaves an empty train or validation set")
        data = VolumeArrays(X, y, sex, [str(i) for i in range(n)])
        return data.subset(split.train_ids), data.subset(split.val_ids)

    def fit(self, X, y, sex=None, eval_set=None, resume=None):
        """Train the network, then fit the self-ensemble weights on validation data.

        ``eval_set`` is ``(X_val, y_val[, sex_val])``; without it a stratified
        ``validation_fraction`` of the training data is held out.
        """
        X = check_volumes(X)
        y = check_ages(y, X.shape[0])
        mcfg = self.model_config(X.shape[2])
        if sex is None:
            if mcfg.variant.has_sex:
                raise MetadataError(f"variant {mcfg.variant.value} needs sex labels")
            sex = np.zeros(X.shape[0], dtype=np.int64)
        sex = check_sexes(sex, X.shape[0])
        tcfg = self.train_config()

        if eval_set is not None:
            Xv = check_volumes(eval_set[0], side=mcfg.side)
            yv = check_ages(eval_set[1], Xv.shape[0])
            sv = check_sexes(eval_set[2], Xv.shape[0]) if len(eval_set) > 2 and eval_set[2] is not None \
                else np.zeros(Xv.shape[0], dtype=np.int64)
            if mcfg.variant.has_sex and (len(eval_set) < 3 or eval_set[2] is None):
                raise MetadataError("eval_set needs sex labels for this variant")
            train_data = VolumeArrays(X, y, sex)
            val_data = VolumeArrays(Xv, yv, sv)
        else:
            train_data, val_data = self._split(X, y, sex)

        set_determinism(self.deterministic, self.random_state)
        model = build_model(mcfg)
        log_path = self.log_path
        model, state = train(model, train_data, val_data, tcfg, checkpoint_dir=self.checkpoint_dir,
                             log_path=log_path, resume=resume)
        self.model_ = model
        self.train_state_ = state
        self.side_ = mcfg.side
        self.ensemble_weights_ = None
        if mcfg.variant.has_shallow:
            heads = predict_heads(model, val_data.X, self.val_batch_size)["age"]
            self.ensemble_weights_ = fit_ensemble_weights(
                val_data.age, heads["final"], {d: heads[d] for d in model.depths})
        return self

    def predict_heads(self, X):
        """Per-head predictions: ``{"age": {"final", d...}, "sex": {...}, "latent"}``."""
        check_is_fitted(self, "model_")
        return predict_heads(self.model_, check_volumes(X, side=self.side_), self.val_batch_size)

    def predict(self, X):
        heads = self.predict_heads(X)["age"]
        if self.self_ensemble and self.ensemble_weights_ is not None:
            return ensemble_predict(heads["final"], {d: heads[d] for d in self.model_.depths},
                                    self.ensemble_weights_)
        return heads["final"]

    def predict_sex_proba(self, X):
        """Probability of sex=1 (male) from the final sex head."""
        check_is_fitted(self, "model_")
        if not self.model_.cfg.variant.has_sex:
            raise AttributeError(f"variant {self.model_.cfg.variant.value} has no sex head")
        return self.predict_heads(X)["sex"]["final"]

    def predict_sex(self, X):
        return (self.predict_sex_proba(X) >= 0.5).astype(np.int64)

    def transform(self, X):
        """Latent code ``z`` of each volume, shape ``(n, latent_dim)``."""
        return self.predict_heads(X)["latent"]

    def save(self, path):
        check_is_fitted(self, "model_")
        extra = {"estimator_params": _jsonable(self.get_params()),
                 "ensemble": None if self.ensemble_weights_ is None else self.ensemble_weights_.to_dict()}
        return ckpt.save_checkpoint(path, self.model_, None, self.train_state_, extra)

    @classmethod
    def load(cls, path):
        """Rebuild a fitted estimator from a checkpoint written by ``save`` or the trainer."""
        model, meta, _ = ckpt.load_checkpoint(path)
        extra = meta.get("extra") or {}
        params = {k: v for k, v in (extra.get("estimator_params") or {}).items() if k in cls().get_params()}
        est = cls(**params)
        est.variant = model.cfg.variant.value
        est.model_ = model.eval()
        est.side_ = model.cfg.side
        est.train_state_ = TrainState.from_dict(meta["train_state"]) if meta.get("train_state") else TrainState()
        ens = extra.get("ensemble")
        est.ensemble_weights_ = EnsembleWeights.from_dict(ens) if ens else None
        return est

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.non_deterministic = not self.deterministic
        return tags


def _jsonable(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, AugmentationConfig):
            v = {f: getattr(v, f) for f in v.__dataclass_fields__}
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out

