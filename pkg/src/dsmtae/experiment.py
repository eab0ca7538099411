"""Dataset assembly and artifact writing shared by the command-line entry points."""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from .exceptions import FormatError, MetadataError, ParameterError
from .trainer import VolumeArrays
from .volume_data.io import (
    load_volume,
    read_label_table,
    read_manifest,
    write_label_table,
    write_manifest,
    write_phantom_file,
)
from .volume_data.phantom import generate_cohort
from .volume_data.split import make_split
from .volume_data.preprocess import preprocess_volume


def experiment_dir(root, cfg):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path(root) / f"{cfg.digest()}-{stamp}"


def synth_dataset(cfg, out_dir):
    """Write ``cfg.phantom_n`` phantoms, a label table and a manifest into ``out_dir``."""
    if cfg.phantom is None or cfg.phantom_n < 1:
        raise ParameterError("data.phantom.n must be a positive sample count")
    out_dir = Path(out_dir)
    vol_dir = out_dir / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    samples = generate_cohort(cfg.phantom_n, cfg.phantom, seed=cfg.seed)
    split = make_split(samples, cfg.val_fraction, cfg.age_bins, rng_seed=cfg.seed)
    val = set(split.val_ids)
    labels, manifest = [], []
    for s in samples:
        part = "val" if s.subject_id in val else "train"
        rel = f"volumes/{s.subject_id}.dsmt"
        write_phantom_file(out_dir / rel, s)
        labels.append({"subject_id": s.subject_id, "age": repr(s.age), "sex": s.sex, "site": "phantom", "split": part})
        manifest.append((rel, s.subject_id, part))
    write_label_table(out_dir / "labels.csv", labels)
    write_manifest(out_dir / "manifest.csv", manifest)
    return out_dir / "manifest.csv"


def load_dataset(cfg):
    """Load and preprocess every manifest entry.

    Returns ``(train, val)`` ``VolumeArrays``. Manifest split values
    ``train``/``val`` are honoured; when the column is blank a stratified
    split is drawn with the configured seed.
    """
    if cfg.manifest is None:
        raise FormatError("config has no data.manifest")
    entries = read_manifest(cfg.manifest)
    if not entries:
        raise FormatError(f"{cfg.manifest}: manifest lists no samples")
    labels = read_label_table(cfg.labels) if cfg.labels else None
    if labels is None and (cfg.manifest.parent / "labels.csv").is_file():
        labels = read_label_table(cfg.manifest.parent / "labels.csv")
    samples, parts = [], []
    for path, sid, part in entries:
        s = load_volume(path, labels)
        if sid and s.subject_id != sid:
            s.subject_id = sid
        v = preprocess_volume(s.voxels, side=cfg.model.side, margin=cfg.margin, crop=cfg.crop)
        samples.append(s.replace_voxels(v))
        parts.append(part)
    if any(p not in ("train", "val") for p in parts):
        split = make_split(samples, cfg.val_fraction, cfg.age_bins, rng_seed=cfg.seed)
        val = set(split.val_ids)
        parts = ["val" if s.subject_id in val else "train" for s in samples]
    data = VolumeArrays.from_samples(samples)
    tr = [i for i, p in enumerate(parts) if p == "train"]
    va = [i for i, p in enumerate(parts) if p == "val"]
    if not tr or not va:
        raise MetadataError("dataset needs at least one training and one validation sample")
    return data.subset(tr), data.subset(va)


def write_predictions(path, data, heads, ensemble_pred, depths):
    """Prediction dump: subject_id, y_true, y_pred_final, y_pred_d<d>..., y_pred_ensemble, sex."""
    cols = ["subject_id", "y_true", "y_pred_final"] + [f"y_pred_d{d}" for d in depths] + ["y_pred_ensemble", "sex"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, sid in enumerate(data.ids):
            w.writerow([sid, repr(float(data.age[i])), repr(float(heads["final"][i]))]
                       + [repr(float(heads[d][i])) for d in depths]
                       + [repr(float(ensemble_pred[i])), int(data.sex[i])])


def read_predictions(path):
    """Inverse of ``write_predictions``: dict of column name -> numpy array (ids as list)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"{path}: empty prediction dump")
    out = {"subject_id": [r["subject_id"] for r in rows]}
    for k in rows[0]:
        if k != "subject_id":
            out[k] = np.array([float(r[k]) for r in rows])
    return out


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
