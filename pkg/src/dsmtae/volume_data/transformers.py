from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .preprocess import preprocess_volume


class VolumePreprocessor(TransformerMixin, BaseEstimator):
    """Crop, resample and normalize raw volumes into an ``(n, side, side, side)`` array.

    Stateless: ``fit`` only records the output side. Inputs may be raw
    arrays of differing shapes or ``VolumeSample`` objects.
    """

    def __init__(self, side=96, margin=2, crop=True):
        self.side = side
        self.margin = margin
        self.crop = crop

    def fit(self, X, y=None):
        self.n_features_out_ = self.side ** 3
        return self

    def transform(self, X):
        vols = [np.asarray(getattr(x, "voxels", x)) for x in X]
        out = np.empty((len(vols),) + (self.side,) * 3, dtype=np.float32)
        for i, v in enumerate(vols):
            out[i] = preprocess_volume(v, side=self.side, margin=self.margin, crop=self.crop)
        return out

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


def stack_samples(samples):
    """Collect ``VolumeSample`` objects into ``(X, age, sex, ids)`` arrays."""
    X = np.stack([s.voxels for s in samples]).astype(np.float32)
    age = np.array([s.age for s in samples], dtype=np.float64)
    sex = np.array([s.sex for s in samples], dtype=np.int64)
    ids = [s.subject_id for s in samples]
    return X, age, sex, ids
