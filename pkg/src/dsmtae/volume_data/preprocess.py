"""Deterministic volume preprocessing: crop, resample to a cube, min-max normalize."""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from ..exceptions import ParameterError


class CropResult(NamedTuple):
    volume: np.ndarray
    box: tuple  # ((lo, hi), ...) half-open index ranges per axis
    empty: bool


def crop_to_content(v, margin=2, threshold=0.0):
    """Crop to the bounding box of voxels strictly above ``threshold``.

    The box is grown by ``margin`` voxels on every side and clamped to the
    array bounds. An all-background volume comes back uncropped with
    ``empty=True``.
    """
    v = np.asarray(v)
    if v.size == 0:
        raise ParameterError("cannot crop an empty volume")
    if margin < 0:
        raise ParameterError("margin must be non-negative")
    mask = v > threshold
    if not mask.any():
        warnings.warn("volume has no foreground voxels; returning it uncropped", RuntimeWarning, stacklevel=2)
        return CropResult(v, tuple((0, n) for n in v.shape), True)

    box = []
    for axis in range(v.ndim):
        other = tuple(a for a in range(v.ndim) if a != axis)
        hits = np.flatnonzero(mask.any(axis=other))
        lo = max(int(hits[0]) - margin, 0)
        hi = min(int(hits[-1]) + 1 + margin, v.shape[axis])
        box.append((lo, hi))
    slices = tuple(slice(lo, hi) for lo, hi in box)
    return CropResult(v[slices], tuple(box), False)


def resample_to_cube(v, side=96):
    """Trilinear resampling of ``v`` onto a ``side``^3 grid.

    Corner voxels map onto corner voxels, so sample ``j`` along an axis of
    length ``n`` reads input coordinate ``j * (n - 1) / (side - 1)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ParameterError("cannot resample an empty volume")
    if int(side) != side or side < 2:
        raise ParameterError(f"side must be an integer >= 2, got {side!r}")
    side = int(side)
    if v.shape == (side,) * 3:
        return v.astype(np.float32)

    axes = []
    for n in v.shape:
        if n == 1:
            axes.append(np.zeros(side))
        else:
            axes.append(np.arange(side) * ((n - 1) / (side - 1)))
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    out = ndimage.map_coordinates(v, coords, order=1, mode="nearest")
    np.clip(out, v.min(), v.max(), out=out)
    return out.astype(np.float32)


def normalize(v):
    """Per-volume min-max scaling to [0, 1]; constant volumes become zeros."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ParameterError("cannot normalize an empty volume")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros(v.shape, dtype=np.float32)
    out = (v - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def preprocess_volume(v, side=96, margin=2, crop=True):
    """crop -> resample -> normalize, returning a ``side``^3 float32 array in [0, 1]."""
    if crop:
        v = crop_to_content(v, margin=margin).volume
    return normalize(resample_to_cube(v, side))
