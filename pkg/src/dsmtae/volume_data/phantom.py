"""Parametric head phantoms whose morphology depends on age and sex.

A phantom is an outer ellipsoid with a bright cortical shell, a mid-grey
interior and a dark ventricle ellipsoid at the center. With age the shell
thins and the ventricle grows, both linearly; male phantoms are scaled up
by ``1 + sex_scale_delta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ParameterError
from .types import PhantomConfig, VolumeSample

SHELL_INTENSITY = 1.0
TISSUE_INTENSITY = 0.55
VENTRICLE_INTENSITY = 0.15
MIN_FOREGROUND = 0.01

_VENTRICLE_ASPECT = np.array([1.3, 0.8, 1.0])


@dataclass(frozen=True)
class PhantomGeometry:
    center: np.ndarray
    head_radii: np.ndarray
    cortex_thickness: float
    ventricle_radius: float

    @property
    def ventricle_radii(self):
        return self.ventricle_radius * _VENTRICLE_ASPECT


def phantom_geometry(age, sex, cfg: PhantomConfig, rng) -> PhantomGeometry:
    lo, hi = cfg.age_range
    if not lo <= age <= hi:
        raise ParameterError(f"age {age} outside phantom age_range {cfg.age_range}")
    if sex not in (0, 1):
        raise ParameterError(f"sex must be 0 or 1, got {sex!r}")
    # draws happen in a fixed order so a seed pins every nuisance parameter
    shift = rng.uniform(-0.5, 0.5, size=3)
    head_jitter = rng.uniform(-cfg.geometry_jitter, cfg.geometry_jitter, size=3)
    tissue_jitter = rng.uniform(-cfg.geometry_jitter, cfg.geometry_jitter, size=2)

    scale = 1.0 + cfg.sex_scale_delta * sex
    years = age - lo
    thickness = (cfg.base_cortex_thickness - cfg.cortex_thinning_rate * years) * (1 + tissue_jitter[0])
    ventricle = (cfg.base_ventricle_radius + cfg.ventricle_growth_rate * years) * (1 + tissue_jitter[1])
    radii = np.asarray(cfg.head_radii_fraction) * cfg.side * (1 + head_jitter)
    return PhantomGeometry(
        center=(cfg.side - 1) / 2 + shift,
        head_radii=radii * scale,
        cortex_thickness=thickness * scale,
        ventricle_radius=ventricle * scale,
    )


def _inside(grid, center, radii):
    return sum(((g - c) / r) ** 2 for g, c, r in zip(grid, center, radii)) <= 1.0


def render_phantom(geom: PhantomGeometry, side, noise_sigma=0.0, rng=None):
    axis = np.arange(side, dtype=np.float64)
    grid = np.meshgrid(axis, axis, axis, indexing="ij")
    head = _inside(grid, geom.center, geom.head_radii)
    inner = _inside(grid, geom.center, np.maximum(geom.head_radii - geom.cortex_thickness, 1e-6))
    ventricle = _inside(grid, geom.center, geom.ventricle_radii)

    v = np.zeros((side,) * 3, dtype=np.float64)
    v[head] = SHELL_INTENSITY
    v[inner] = TISSUE_INTENSITY
    v[ventricle & inner] = VENTRICLE_INTENSITY
    if noise_sigma > 0:
        v[head] += rng.normal(0.0, noise_sigma, size=int(head.sum()))
    v[head] = np.clip(v[head], MIN_FOREGROUND, 1.0)
    return v.astype(np.float32)


def generate_phantom(age, sex, cfg: PhantomConfig, rng=None, subject_id="") -> VolumeSample:
    """Render one phantom; identical (age, sex, rng seed) give identical voxels."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    geom = phantom_geometry(age, sex, cfg, rng)
    voxels = render_phantom(geom, cfg.side, cfg.noise_sigma, rng)
    return VolumeSample(voxels, float(age), int(sex), subject_id)


def sample_rng(seed, index):
    """Independent generator for sample ``index`` under a global ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_cohort(n, cfg: PhantomConfig, seed=None):
    """Draw ``n`` phantoms with uniform ages and balanced sexes.

    Sample ``i`` only depends on ``(seed, i)``, so cohorts are reproducible
    regardless of how the work is scheduled.
    """
    if n < 1:
        raise ParameterError("cohort size must be at least 1")
    seed = cfg.rng_seed if seed is None else seed
    lo, hi = cfg.age_range
    samples = []
    for i in range(n):
        rng = sample_rng(seed, i)
        age = float(rng.uniform(lo, hi))
        sex = i % 2
        samples.append(generate_phantom(age, sex, cfg, rng, subject_id=f"sub-{i:05d}"))
    return samples
