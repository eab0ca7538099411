"""Training driver: cosine schedule, early stopping, checkpointing, grid search
and finite-difference gradient verification."""

from __future__ import annotations

import copy
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np
import torch

from . import checkpoint as ckpt
from .exceptions import ParameterError, TrainingError
from .losses import LossWeights, compute_losses
from .model import DSMTAENet, ModelConfig, build_model
from .validation import check_ages, check_sexes, check_volumes
from .volume_data.augment import augment
from .volume_data.types import AugmentationConfig, VolumeSample

logger = logging.getLogger(__name__)


class VolumeArrays(NamedTuple):
    """In-memory dataset: volumes ``(n, 1, S, S, S)``, ages, sexes, ids."""

    X: np.ndarray
    age: np.ndarray
    sex: np.ndarray
    ids: Optional[list] = None

    @classmethod
    def from_arrays(cls, X, age, sex=None, ids=None):
        X = check_volumes(X)
        n = X.shape[0]
        age = check_ages(age, n)
        sex = np.zeros(n, dtype=np.int64) if sex is None else check_sexes(sex, n)
        return cls(X, age, sex, list(ids) if ids is not None else [str(i) for i in range(n)])

    @classmethod
    def from_samples(cls, samples):
        return cls.from_arrays(
            np.stack([s.voxels for s in samples]),
            [s.age for s in samples],
            [s.sex for s in samples],
            [s.subject_id for s in samples],
        )

    def subset(self, idx):
        idx = np.asarray(idx)
        ids = [self.ids[i] for i in idx] if self.ids is not None else None
        return VolumeArrays(self.X[idx], self.age[idx], self.sex[idx], ids)

    def __len__(self):
        return self.X.shape[0]


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_train: int = 4
    batch_val: int = 2
    lr0: float = 1e-3
    patience: int = 20
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    augmentation: Optional[AugmentationConfig] = None
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationConfig(**self.augmentation)
        self.betas = tuple(float(b) for b in self.betas)
        if self.epochs < 1 or self.patience < 1:
            raise ParameterError("epochs and patience must be >= 1")
        if self.batch_train < 1 or self.batch_val < 1:
            raise ParameterError("batch sizes must be >= 1")
        if not self.lr0 > 0:
            raise ParameterError("lr0 must be positive")

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = self.loss_weights.to_dict()
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainState:
    epoch: int = -1
    best_val_mae: float = math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    history: list = field(default_factory=list)
    stopped_early: bool = False

    def to_dict(self):
        d = asdict(self)
        if not math.isfinite(d["best_val_mae"]):
            d["best_val_mae"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("best_val_mae") is None:
            d["best_val_mae"] = math.inf
        return cls(**d)


def cosine_lr(epoch, total, lr0):
    """lr0 * (1 + cos(pi * epoch / total)) / 2, decaying to zero at ``total``."""
    if total < 1:
        raise ParameterError("total epochs must be >= 1")
    if not 0 <= epoch <= total:
        raise ParameterError(f"epoch {epoch} outside [0, {total}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


class EarlyStopping:
    """Tracks the best (lowest) metric and signals a stop after ``patience``
    epochs without strict improvement."""

    def __init__(self, patience, best=math.inf, best_epoch=-1):
        if patience < 1:
            raise ParameterError("patience must be >= 1")
        self.patience = patience
        self.best = best
        self.best_epoch = best_epoch
        self.epochs_since_improvement = 0

    def update(self, epoch, metric):
        """Record ``metric`` for ``epoch``; return (improved, should_stop)."""
        improved = metric < self.best
        if improved:
            self.best, self.best_epoch = metric, epoch
        self.epochs_since_improvement = epoch - self.best_epoch
        return improved, self.epochs_since_improvement >= self.patience


def set_determinism(enabled, seed):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(bool(enabled), warn_only=False)


def _batches(n, size, order):
    """Consecutive batches of ``order``; a trailing singleton joins the previous
    batch because batch norm cannot normalize one sample at 1x1x1 resolution."""
    out = [order[i:i + size] for i in range(0, n, size)]
    if len(out) > 1 and len(out[-1]) == 1:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


@torch.no_grad()
def predict_heads(model: DSMTAENet, X, batch_size=2):
    """Eval-mode predictions of every head.

    Returns ``{"age": {"final": arr, d: arr, ...}, "sex": {...}, "latent": arr}``;
    the ``sex`` dict is empty for variants without a sex task.
    """
    X = check_volumes(X, side=model.cfg.side)
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    ages, sexes, latents = [], [], []
    for start in range(0, X.shape[0], batch_size):
        xb = torch.from_numpy(X[start:start + batch_size]).to(dtype)
        out = model(xb)
        ages.append(torch.stack(out.age_preds, 1).double().numpy())
        if out.sex_probs:
            sexes.append(torch.stack(out.sex_probs, 1).double().numpy())
        latents.append(out.latent.double().numpy())
    model.train(was_training)
    keys = ["final"] + list(model.depths)
    age = np.concatenate(ages)
    res = {"age": {k: age[:, i] for i, k in enumerate(keys)}, "sex": {}, "latent": np.concatenate(latents)}
    if sexes:
        sex = np.concatenate(sexes)
        res["sex"] = {k: sex[:, i] for i, k in enumerate(keys)}
    return res


def final_head_mae(model, data: VolumeArrays, batch_size=2):
    pred = predict_heads(model, data.X, batch_size)["age"]["final"]
    return float(np.mean(np.abs(data.age - pred)))


def _augmented(X, idx, age, sex, cfg: AugmentationConfig, seed, epoch):
    out = np.empty((len(idx),) + X.shape[1:], dtype=np.float32)
    for j, i in enumerate(idx):
        rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, int(i)]))
        s = augment(VolumeSample(X[i, 0], float(age[i]), int(sex[i])), cfg, rng)
        out[j, 0] = s.voxels
    return out


def _append_log(fh, record):
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def train(model: DSMTAENet, train_data: VolumeArrays, val_data: VolumeArrays, cfg: TrainConfig,
          checkpoint_dir=None, log_path=None, resume=None, evaluator: Callable = None):
    """Optimize ``model`` in place and return ``(model, TrainState)``.

    After every epoch the final-head validation MAE is measured (or
    ``evaluator(model, epoch)`` when supplied). Training stops once it has
    not improved for ``cfg.patience`` epochs, and the best weights are
    restored before returning. With ``checkpoint_dir`` set, ``best.npz`` is
    written on every improvement, ``last.npz`` after every epoch and
    ``final.npz`` when the loop ends. ``resume`` is a checkpoint path whose
    weights, optimizer moments and state are continued from.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ParameterError("training and validation sets must be non-empty")
    variant = model.cfg.variant
    w = cfg.loss_weights
    if variant.has_shallow:
        w.eta_for(model.depths)  # raises if eta keys disagree with the heads
    set_determinism(cfg.deterministic, cfg.seed)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=cfg.betas, eps=cfg.eps)
    state = TrainState()
    best_weights = None
    if resume is not None:
        meta, arrays = ckpt.read_checkpoint(resume)
        ckpt.load_weights(model, arrays)
        ckpt.load_optimizer(optimizer, model, meta, arrays)
        state = TrainState.from_dict(meta["train_state"])
        best_path = Path(resume).with_name("best.npz")
        if best_path.is_file():
            _, best_arrays = ckpt.read_checkpoint(best_path)
            snapshot = copy.deepcopy(model)
            ckpt.load_weights(snapshot, best_arrays)
            best_weights = copy.deepcopy(snapshot.state_dict())
    else:
        scale = float(np.std(train_data.age)) or 1.0
        model.set_age_scaling(float(np.mean(train_data.age)), scale)

    stopper = EarlyStopping(cfg.patience, state.best_val_mae, state.best_epoch)
    stopper.epochs_since_improvement = state.epochs_since_improvement
    if best_weights is None:
        best_weights = copy.deepcopy(model.state_dict())
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    log = open(log_path, "a") if log_path is not None else None
    dtype = next(model.parameters()).dtype
    n = len(train_data)

    try:
        for epoch in range(state.epoch + 1, cfg.epochs):
            if state.epochs_since_improvement >= cfg.patience:
                break
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
            for g in optimizer.param_groups:
                g["lr"] = lr
            torch.manual_seed(cfg.seed * 100003 + epoch)
            order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n)
            model.train()
            sums = {}
            batches = _batches(n, cfg.batch_train, order)
            for step, idx in enumerate(batches):
                if cfg.augmentation is not None:
                    xb = _augmented(train_data.X, idx, train_data.age, train_data.sex,
                                    cfg.augmentation, cfg.seed, epoch)
                else:
                    xb = train_data.X[idx]
                xb = torch.from_numpy(xb).to(dtype)
                out = model(xb)
                parts = compute_losses(out, xb, torch.from_numpy(train_data.age[idx]),
                                       torch.from_numpy(train_data.sex[idx]), w, variant)
                record = {"kind": "step", "epoch": epoch, "step": step, "lr": lr, **parts.to_record()}
                if not math.isfinite(record["l_total"]):
                    raise TrainingError(f"non-finite loss at epoch {epoch} step {step}", record)
                optimizer.zero_grad(set_to_none=True)
                parts.l_total.backward()
                optimizer.step()
                _append_log(log, record)
                for k, v in record.items():
                    if k.startswith("l_"):
                        sums[k] = sums.get(k, 0.0) + v * len(idx)

            val_mae = evaluator(model, epoch) if evaluator is not None else \
                final_head_mae(model, val_data, cfg.batch_val)
            improved, stop = stopper.update(epoch, val_mae)
            state.epoch = epoch
            state.best_val_mae, state.best_epoch = stopper.best, stopper.best_epoch
            state.epochs_since_improvement = stopper.epochs_since_improvement
            summary = {"epoch": epoch, "lr": lr, "val_mae": float(val_mae),
                       **{k: v / n for k, v in sorted(sums.items())}}
            state.history.append(summary)
            _append_log(log, {"kind": "epoch", **summary})
            logger.info("epoch %d lr %.2e loss %.4f val_mae %.4f", epoch, lr, summary["l_total"], val_mae)
            if improved:
                best_weights = copy.deepcopy(model.state_dict())
                if checkpoint_dir is not None:
                    ckpt.save_checkpoint(checkpoint_dir / "best.npz", model, optimizer, state)
            if checkpoint_dir is not None:
                ckpt.save_checkpoint(checkpoint_dir / "last.npz", model, optimizer, state)
            if stop:
                state.stopped_early = True
                break
    finally:
        if log is not None:
            log.close()

    if checkpoint_dir is not None:
        ckpt.save_checkpoint(checkpoint_dir / "final.npz", model, optimizer, state)
    model.load_state_dict(best_weights)
    model.eval()
    return model, state


# -- grid search -------------------------------------------------------------

_GRID_KEYS = ("alpha", "beta", "gamma")


@dataclass
class GridSearchResult:
    best: LossWeights
    best_mae: float
    coarse_best: tuple
    fine_grid: dict
    evaluations: list  # [((alpha, beta, gamma), mae), ...] in evaluation order


def _fine_axis(values, winner, points):
    values = sorted(set(values))
    if len(values) == 1 or points == 1:
        return [winner]
    i = values.index(winner)
    gaps = [values[j + 1] - values[j] for j in (i - 1, i) if 0 <= j < len(values) - 1]
    step = min(gaps)
    axis = np.linspace(winner - step, winner + step, points)
    axis = np.clip(np.round(axis, 12), 0.0, 1.0)
    return sorted(set(float(a) for a in axis) | {winner})


def grid_search(objective: Callable, coarse: dict, fine_points=5, eta=None) -> GridSearchResult:
    """Coarse-to-fine search of (alpha, beta, gamma) minimizing ``objective``.

    ``objective(LossWeights) -> validation MAE``. Phase one scans the full
    product of ``coarse[alpha|beta|gamma]``; phase two scans ``fine_points``
    values per axis spanning one coarse step either side of the winner.
    Ties go to the lexicographically smallest (alpha, beta, gamma).
    """
    if set(coarse) != set(_GRID_KEYS):
        raise ParameterError(f"coarse grid needs exactly the keys {_GRID_KEYS}")
    axes = [sorted(set(float(v) for v in coarse[k])) for k in _GRID_KEYS]
    if any(len(a) == 0 for a in axes):
        raise ParameterError("grid axes must be non-empty")
    if fine_points < 1:
        raise ParameterError("fine_points must be >= 1")
    seen = {}
    evaluations = []

    def run(points):
        for p in points:
            key = tuple(round(v, 12) for v in p)
            if key not in seen:
                seen[key] = float(objective(LossWeights(*key, eta=eta)))
                evaluations.append((key, seen[key]))

    def winner(points):
        keys = [tuple(round(v, 12) for v in p) for p in points]
        return min(keys, key=lambda k: (seen[k], k))

    coarse_points = list(itertools.product(*axes))
    run(coarse_points)
    coarse_best = winner(coarse_points)
    fine = {k: _fine_axis(a, c, fine_points) for k, a, c in zip(_GRID_KEYS, axes, coarse_best)}
    fine_points_list = list(itertools.product(*(fine[k] for k in _GRID_KEYS)))
    run(fine_points_list)
    best = winner(list(seen))
    return GridSearchResult(LossWeights(*best, eta=eta), seen[best], coarse_best, fine, evaluations)


def training_objective(train_data, val_data, model_cfg: ModelConfig, train_cfg: TrainConfig, epochs_per_point=10):
    """Objective for ``grid_search``: short training run, best final-head val MAE."""
    def objective(weights):
        cfg = copy.deepcopy(train_cfg)
        cfg.loss_weights = weights
        cfg.epochs = epochs_per_point
        set_determinism(cfg.deterministic, cfg.seed)
        model = build_model(copy.deepcopy(model_cfg))
        _, state = train(model, train_data, val_data, cfg)
        return state.best_val_mae
    return objective


# -- gradient verification ---------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_sampled: int
    entries: list  # (param name, flat index, analytic, numeric, rel error)

    def passed(self, tol):
        return self.max_rel_error < tol


def _disable_dropout(model):
    model.train()
    for m in model.modules():
        if isinstance(m, torch.nn.Dropout):
            m.eval()


def gradient_check(model: DSMTAENet, loss_weights: LossWeights, X, age, sex, n_params_sampled=20,
                   step=1e-5, seed=0, abs_floor=1e-6, corrupt=False) -> GradCheckReport:
    """Compare autograd dL_total/dw with central differences for sampled weights.

    Runs on a float64 copy with dropout disabled and batch norm in training
    mode. A parameter tensor is drawn uniformly, then an element within it.
    Relative error is ``|a - n| / max(|a|, |n|, abs_floor)``. ``corrupt``
    detaches the age term on the analytic side, a negative control that
    must make the check fail.
    """
    model = copy.deepcopy(model).double()
    _disable_dropout(model)
    variant = model.cfg.variant
    x = torch.as_tensor(check_volumes(X, side=model.cfg.side), dtype=torch.float64)
    age = torch.as_tensor(np.asarray(age, dtype=np.float64))
    sex = torch.as_tensor(np.asarray(sex, dtype=np.float64))

    def loss(analytic=False):
        parts = compute_losses(model(x), x, age, sex, loss_weights, variant)
        if analytic and corrupt:
            a = 1.0 - loss_weights.alpha if variant.has_decoder else 1.0
            b = loss_weights.beta if variant.has_sex else 1.0
            return parts.l_total - a * b * (parts.l_ba - parts.l_ba.detach())
        return parts.l_total

    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    model.zero_grad()
    loss(analytic=True).backward()
    grads = {n: p.grad.detach().clone() for n, p in named}

    rng = np.random.default_rng(seed)
    entries = []
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_params_sampled):
            name, p = named[int(rng.integers(len(named)))]
            flat = p.view(-1)
            i = int(rng.integers(flat.numel()))
            orig = flat[i].item()
            flat[i] = orig + step
            up = loss().item()
            flat[i] = orig - step
            down = loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            analytic = grads[name].view(-1)[i].item()
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), abs_floor)
            worst = max(worst, rel)
            entries.append((name, i, analytic, numeric, rel))
    return GradCheckReport(worst, n_params_sampled, entries)
