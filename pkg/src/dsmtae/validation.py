"""Input validation helpers used by the estimators and the trainer."""

from __future__ import annotations

import numpy as np

from .exceptions import MetadataError, ParameterError, ShapeError


def check_volumes(X, side=None, dtype=np.float32):
    """Return ``X`` as a contiguous ``(n, 1, S, S, S)`` array.

    Accepts ``(n, S, S, S)``, ``(n, 1, S, S, S)`` or a sequence of 3D arrays.
    """
    if isinstance(X, (list, tuple)):
        X = np.stack([np.asarray(getattr(x, "voxels", x)) for x in X]) if len(X) else np.empty((0,))
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 4:
        X = X[:, None]
    if X.ndim != 5 or X.shape[1] != 1:
        raise ShapeError(f"expected volumes shaped (n, S, S, S) or (n, 1, S, S, S), got {X.shape}")
    if X.shape[0] == 0:
        raise ParameterError("no volumes given")
    s = X.shape[2]
    if X.shape[2:] != (s, s, s):
        raise ShapeError(f"volumes must be cubic, got spatial shape {X.shape[2:]}")
    if side is not None and s != side:
        raise ShapeError(f"model expects side {side}, got {s}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("volumes contain non-finite values")
    return np.ascontiguousarray(X)


def check_ages(y, n=None):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if n is not None and len(y) != n:
        raise ShapeError(f"got {len(y)} ages for {n} volumes")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise MetadataError("ages must be finite and positive")
    return y


def check_sexes(sex, n=None):
    s = np.asarray(sex).reshape(-1)
    if n is not None and len(s) != n:
        raise ShapeError(f"got {len(s)} sex labels for {n} volumes")
    if not np.all(np.isin(s, (0, 1))):
        raise MetadataError("sex labels must be 0 (female) or 1 (male)")
    return s.astype(np.int64)


def check_same_length(*arrays):
    arrays = [np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ShapeError("inputs must have equal lengths")
    if n == 0:
        raise ParameterError("inputs must be non-empty")
    return arrays
