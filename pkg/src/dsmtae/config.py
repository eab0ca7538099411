"""Hierarchical YAML experiment configuration.

Example::

    seed: 0
    deterministic: true
    data:
      manifest: data/manifest.csv     # train/eval/ablate read this
      labels: null                    # sidecar table for NIfTI inputs
      phantom: {n: 200, side: 32}     # synth writes this cohort
      split: {val_fraction: 0.2}
      preprocess: {crop: false, margin: 2}
    model: {side: 32, variant: DSMT_AE, block_channels: [8, 16, 32, 64, 128]}
    train: {epochs: 20, loss_weights: {alpha: 0.3, beta: 0.7, gamma: 0.5}}
    grid: {coarse: {alpha: [0.1, 0.5], beta: [0.5, 0.9], gamma: [0.5, 1.0]}}
    eval: {plots: true}
    gradcheck: {side: 16, n_samples: 4, n_params: 20}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigurationError, DSMTError
from .losses import LossWeights
from .model import ModelConfig
from .trainer import TrainConfig
from .volume_data.split import DEFAULT_AGE_BINS
from .volume_data.types import AugmentationConfig, PhantomConfig

_SECTIONS = {"seed", "deterministic", "data", "model", "train", "grid", "ensemble", "eval", "gradcheck"}


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    seed: int = 0
    deterministic: bool = True
    model: ModelConfig = None
    train: TrainConfig = None
    phantom: PhantomConfig = None
    phantom_n: int = 0
    manifest: Path = None
    labels: Path = None
    val_fraction: float = 0.2
    age_bins: tuple = DEFAULT_AGE_BINS
    crop: bool = True
    margin: int = 2
    grid: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    gradcheck: dict = field(default_factory=dict)

    def digest(self):
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:8]


def _section(raw, name):
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"section {name!r} must be a mapping")
    return value


def build_config(raw, base_dir=".", overrides=None) -> ExperimentConfig:
    """Validate ``raw`` and build every typed sub-config. Nothing touches disk
    beyond existence checks of referenced paths."""
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    base_dir = Path(base_dir)
    seed = int(raw.get("seed", 0))
    deterministic = bool(raw.get("deterministic", True))
    try:
        model = ModelConfig(**_section(raw, "model")).validate()
        tr = dict(_section(raw, "train"))
        lw = tr.pop("loss_weights", {}) or {}
        aug = tr.pop("augmentation", None)  # absent/null: off; mapping (even empty): on
        if aug is not None:
            if not isinstance(aug, dict):
                raise ConfigurationError("train.augmentation must be a mapping or null")
            aug = AugmentationConfig(**{"rng_seed": seed, **aug})
        train = TrainConfig(**tr, loss_weights=LossWeights(**lw), augmentation=aug,
                            seed=seed, deterministic=deterministic)
        if model.variant.has_shallow:
            train.loss_weights.eta_for(model.depths)
        data = _section(raw, "data")
        ph = dict(data.get("phantom") or {})
        n = int(ph.pop("n", 0))
        phantom = PhantomConfig(**{"side": model.side, "rng_seed": seed, **ph}) if (n or ph) else None
        split = data.get("split") or {}
        prep = data.get("preprocess") or {}
    except DSMTError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc

    cfg = ExperimentConfig(raw=raw, base_dir=base_dir, seed=seed, deterministic=deterministic,
                           model=model, train=train, phantom=phantom, phantom_n=n)
    if data.get("manifest"):
        cfg.manifest = (base_dir / data["manifest"]).resolve()
    if data.get("labels"):
        cfg.labels = (base_dir / data["labels"]).resolve()
        if not cfg.labels.is_file():
            raise ConfigurationError(f"label table {cfg.labels} does not exist")
    cfg.val_fraction = float(split.get("val_fraction", 0.2))
    if not 0.0 < cfg.val_fraction < 1.0:
        raise ConfigurationError("split.val_fraction must lie in (0, 1)")
    cfg.age_bins = tuple(float(e) for e in split.get("age_bins", DEFAULT_AGE_BINS))
    cfg.crop = bool(prep.get("crop", True))
    cfg.margin = int(prep.get("margin", 2))
    cfg.grid = _section(raw, "grid")
    cfg.eval = _section(raw, "eval")
    cfg.gradcheck = _section(raw, "gradcheck")
    return cfg


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
    return build_config(raw, base_dir=path.parent, overrides=overrides)
