"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive. Every model tensor is
stored as little-endian float32 under ``weights/<name>``; Adam moments
live under ``optim/<param index>/<exp_avg|exp_avg_sq>``. A JSON document in
``__meta__`` records the format tag, model config, epoch counter, best
metric, train state and any extras (such as ensemble weights).
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np
import torch

from .exceptions import CompatibilityError, FormatError
from .model import DSMTAENet, ModelConfig, build_model

FORMAT_TAG = "DSMT-CKPT"
FORMAT_VERSION = 1


def _to_f32(t):
    return np.array(t.detach().cpu().numpy(), dtype="<f4", order="C")


def save_checkpoint(path, model: DSMTAENet, optimizer=None, state=None, extra=None):
    arrays = {f"weights/{k}": _to_f32(v) for k, v in model.state_dict().items()}
    steps = {}
    if optimizer is not None:
        index = {id(p): i for i, p in enumerate(model.parameters())}
        for p, st in optimizer.state.items():
            i = index[id(p)]
            arrays[f"optim/{i}/exp_avg"] = _to_f32(st["exp_avg"])
            arrays[f"optim/{i}/exp_avg_sq"] = _to_f32(st["exp_avg_sq"])
            steps[str(i)] = float(st["step"])
    meta = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "has_optimizer": optimizer is not None,
        "optimizer_steps": steps,
        "optimizer_defaults": _optimizer_defaults(optimizer),
        "epoch": None if state is None else state.epoch,
        "best": None if state is None else {"val_mae": state.best_val_mae, "epoch": state.best_epoch},
        "train_state": None if state is None else state.to_dict(),
        "extra": extra or {},
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def _optimizer_defaults(optimizer):
    if optimizer is None:
        return None
    g = optimizer.param_groups[0]
    return {"lr": g["lr"], "betas": list(g["betas"]), "eps": g["eps"]}


def read_checkpoint(path):
    """Return ``(meta, arrays)`` without building a model."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a checkpoint ({exc})") from exc
    if "__meta__" not in arrays:
        raise FormatError(f"{path}: missing metadata")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if meta.get("format") != FORMAT_TAG:
        raise FormatError(f"{path}: unknown format tag {meta.get('format')!r}")
    return meta, arrays


def load_weights(model: DSMTAENet, arrays):
    sd = model.state_dict()
    names = {k[len("weights/"):] for k in arrays if k.startswith("weights/")}
    if names != set(sd):
        missing, unexpected = sorted(set(sd) - names), sorted(names - set(sd))
        raise CompatibilityError(f"checkpoint weights do not match model (missing {missing[:3]}, unexpected {unexpected[:3]})")
    new = {}
    for k, ref in sd.items():
        arr = arrays[f"weights/{k}"]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CompatibilityError(f"shape mismatch for {k}: {arr.shape} vs {tuple(ref.shape)}")
        new[k] = torch.from_numpy(np.array(arr)).to(ref.dtype)
    model.load_state_dict(new)


def load_optimizer(optimizer, model, meta, arrays):
    params = list(model.parameters())
    for key, step in meta.get("optimizer_steps", {}).items():
        p = params[int(key)]
        optimizer.state[p] = {
            "step": torch.tensor(step),
            "exp_avg": torch.from_numpy(np.array(arrays[f"optim/{key}/exp_avg"])).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(np.array(arrays[f"optim/{key}/exp_avg_sq"])).to(p.dtype),
        }


def load_checkpoint(path, expected_config: ModelConfig = None):
    """Rebuild the model stored at ``path``.

    Returns ``(model, meta, arrays)``. When ``expected_config`` is given the
    stored config must match it exactly.
    """
    meta, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    if expected_config is not None and cfg.to_dict() != expected_config.to_dict():
        raise CompatibilityError(f"{path}: checkpoint config {cfg.to_dict()} != requested {expected_config.to_dict()}")
    model = build_model(cfg)
    load_weights(model, arrays)
    return model, meta, arrays
