from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..exceptions import MetadataError, ParameterError

FEMALE = 0
MALE = 1


@dataclass
class VolumeSample:
    """One 3D scan with its subject labels (sex: female=0, male=1)."""

    voxels: np.ndarray
    age: float
    sex: int
    subject_id: str = ""
    site_id: Optional[str] = None

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or self.voxels.size == 0:
            raise ParameterError(f"voxels must be a non-empty 3D grid, got shape {self.voxels.shape}")
        if not np.isfinite(self.age) or self.age <= 0:
            raise MetadataError(f"age must be positive, got {self.age!r}")
        if int(self.sex) not in (FEMALE, MALE) or float(self.sex) != int(self.sex):
            raise MetadataError(f"sex must be 0 or 1, got {self.sex!r}")
        self.age = float(self.age)
        self.sex = int(self.sex)

    def replace_voxels(self, voxels: np.ndarray) -> "VolumeSample":
        return VolumeSample(voxels, self.age, self.sex, self.subject_id, self.site_id)


@dataclass
class AugmentationConfig:
    """Random training-time transforms, applied flip -> rotate -> zoom -> erase.

    Every transform fires independently with its own probability.
    """

    flip_prob_per_axis: tuple = (0.5, 0.5, 0.5)
    rotation_range_deg: tuple = (-20.0, 20.0)
    rotation_prob: float = 0.5
    zoom_range: tuple = (0.9, 1.1)
    zoom_prob: float = 0.5
    erase_enabled: bool = True
    erase_prob: float = 0.5
    erase_side_fraction_range: tuple = (0.1, 0.3)
    rng_seed: int = 0

    def __post_init__(self):
        flips = self.flip_prob_per_axis
        if np.isscalar(flips):
            flips = (float(flips),) * 3
        self.flip_prob_per_axis = tuple(float(p) for p in flips)
        if len(self.flip_prob_per_axis) != 3:
            raise ParameterError("flip_prob_per_axis needs one probability per axis")
        for name in ("rotation_prob", "zoom_prob", "erase_prob"):
            _check_prob(getattr(self, name), name)
        for p in self.flip_prob_per_axis:
            _check_prob(p, "flip_prob_per_axis")
        self.rotation_range_deg = _interval(self.rotation_range_deg, "rotation_range_deg")
        self.zoom_range = _interval(self.zoom_range, "zoom_range")
        if self.zoom_range[0] <= 0:
            raise ParameterError("zoom factors must be positive")
        self.erase_side_fraction_range = _interval(self.erase_side_fraction_range, "erase_side_fraction_range")
        lo, hi = self.erase_side_fraction_range
        if lo < 0 or hi > 1:
            raise ParameterError("erase side fractions must lie in [0, 1]")

    @classmethod
    def identity(cls, rng_seed: int = 0) -> "AugmentationConfig":
        return cls(
            flip_prob_per_axis=(0.0, 0.0, 0.0),
            rotation_range_deg=(0.0, 0.0),
            zoom_range=(1.0, 1.0),
            erase_enabled=False,
            rng_seed=rng_seed,
        )


@dataclass
class PhantomConfig:
    """Parameters of the synthetic head phantom.

    Rates are in voxels per year and lengths in voxels, so the defaults
    are tuned for ``side=32``; scale them with the side length.
    """

    side: int = 32
    age_range: tuple = (8.0, 88.0)
    ventricle_growth_rate: float = 0.06
    cortex_thinning_rate: float = 0.035
    sex_scale_delta: float = 0.08
    noise_sigma: float = 0.03
    rng_seed: int = 0
    base_ventricle_radius: float = 1.6
    base_cortex_thickness: float = 4.4
    head_radii_fraction: tuple = (0.36, 0.30, 0.33)
    geometry_jitter: float = 0.03

    def __post_init__(self):
        self.side = int(self.side)
        if self.side < 8:
            raise ParameterError("phantom side must be at least 8 voxels")
        self.age_range = _interval(self.age_range, "age_range")
        if self.age_range[0] <= 0:
            raise ParameterError("age_range must be positive")
        if self.ventricle_growth_rate <= 0 or self.cortex_thinning_rate <= 0:
            raise ParameterError("growth and thinning rates must be positive")
        span = self.age_range[1] - self.age_range[0]
        if self.base_cortex_thickness - self.cortex_thinning_rate * span <= 0:
            raise ParameterError("cortex thickness would reach zero inside age_range")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be non-negative")


@dataclass
class DatasetSplit:
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)
    age_bins: list = field(default_factory=list)

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.val_ids)
        if overlap:
            raise ParameterError(f"train and validation ids overlap: {sorted(overlap)[:5]}")


def _check_prob(p, name):
    if not 0.0 <= float(p) <= 1.0:
        raise ParameterError(f"{name} must be a probability, got {p!r}")


def _interval(value, name):
    lo, hi = (float(v) for v in value)
    if lo > hi:
        raise ParameterError(f"{name} must satisfy low <= high, got {value!r}")
    return (lo, hi)
