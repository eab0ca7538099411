from __future__ import annotations

import numpy as np
from scipy import ndimage

from .types import AugmentationConfig, VolumeSample


def flip(v, axes):
    for axis in axes:
        v = np.flip(v, axis=axis)
    return np.ascontiguousarray(v)


def rotate(v, angle_deg, axis):
    """Rotate about ``axis`` (in the plane of the two other axes), keeping the shape."""
    plane = tuple(a for a in range(3) if a != axis)
    return ndimage.rotate(v, angle_deg, axes=plane, reshape=False, order=1, mode="constant", cval=0.0)


def zoom_about_center(v, factor):
    """Scale content by ``factor`` around the volume center; the grid is unchanged.

    Equivalent to zooming then center-cropping (factor > 1) or zero-padding
    (factor < 1) back to the original shape.
    """
    center = (np.asarray(v.shape, dtype=np.float64) - 1) / 2
    inv = 1.0 / factor
    offset = center - inv * center
    return ndimage.affine_transform(v, np.diag(np.full(3, inv)), offset=offset, order=1, mode="constant", cval=0.0)


def erase_cube(v, side, corner):
    out = v.copy()
    i, j, k = corner
    out[i:i + side, j:j + side, k:k + side] = 0.0
    return out


def augment(sample: VolumeSample, cfg: AugmentationConfig, rng=None) -> VolumeSample:
    """Apply random flip, rotation, zoom and cube erasure in that order.

    ``rng`` is a ``numpy.random.Generator``; when omitted one is seeded
    from ``cfg.rng_seed``. Labels pass through untouched and the result is
    clamped to [0, 1].
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    v = np.asarray(sample.voxels, dtype=np.float32)
    changed = False

    axes = [a for a, p in enumerate(cfg.flip_prob_per_axis) if rng.random() < p]
    if axes:
        v = flip(v, axes)

    lo, hi = cfg.rotation_range_deg
    if rng.random() < cfg.rotation_prob:
        angle = rng.uniform(lo, hi)
        axis = int(rng.integers(3))
        if angle != 0.0:
            v = rotate(v, angle, axis)
            changed = True

    lo, hi = cfg.zoom_range
    if rng.random() < cfg.zoom_prob:
        factor = rng.uniform(lo, hi)
        if factor != 1.0:
            v = zoom_about_center(v, factor)
            changed = True

    if cfg.erase_enabled and rng.random() < cfg.erase_prob:
        lo, hi = cfg.erase_side_fraction_range
        s = v.shape[0]
        side = int(round(rng.uniform(lo, hi) * s))
        side = min(max(side, 1), s)
        corner = tuple(int(rng.integers(0, n - side + 1)) for n in v.shape)
        v = erase_cube(v, side, corner)

    if changed:
        v = np.clip(v, 0.0, 1.0)
    return sample.replace_voxels(v.astype(np.float32, copy=False))
