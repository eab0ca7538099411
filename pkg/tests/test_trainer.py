import json
import math

import numpy as np
import pytest
import torch

from dsmtae.exceptions import ParameterError, TrainingError
from dsmtae.losses import LossWeights, compute_losses
from dsmtae.model import Variant, build_model
from dsmtae.trainer import (
    EarlyStopping,
    TrainConfig,
    VolumeArrays,
    _batches,
    cosine_lr,
    final_head_mae,
    gradient_check,
    grid_search,
    predict_heads,
    train,
)

from .conftest import tiny_config


@pytest.fixture
def tiny_split(tiny_cohort):
    X, age, sex = tiny_cohort
    data = VolumeArrays.from_arrays(X, age, sex)
    return data.subset(range(12)), data.subset(range(12, 16))


def _cfg(**kw):
    params = dict(epochs=4, batch_train=4, batch_val=4, patience=10, seed=0)
    params.update(kw)
    return TrainConfig(**params)


# ---- schedule and stopping ----------------------------------------------------

def test_cosine_schedule_values():
    assert cosine_lr(0, 200, 0.001) == 0.001
    assert cosine_lr(100, 200, 0.001) == pytest.approx(0.0005, abs=1e-18)
    assert cosine_lr(200, 200, 0.001) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, 200, 0.001) == pytest.approx(0.001 * (1 + math.sqrt(0.5)) / 2, rel=1e-15)


def test_cosine_rejects_out_of_range():
    with pytest.raises(ParameterError):
        cosine_lr(201, 200, 0.001)
    with pytest.raises(ParameterError):
        cosine_lr(0, 0, 0.001)


def test_early_stopping_scripted_sequence():
    stopper = EarlyStopping(patience=2)
    signals = [stopper.update(e, m) for e, m in enumerate([5, 4, 4.1, 4.2, 4.3])]
    stop_at = next(e for e, (_, stop) in enumerate(signals) if stop)
    assert stop_at == 3
    assert stopper.best_epoch == 1 and stopper.best == 4


def test_equal_metric_is_not_improvement():
    stopper = EarlyStopping(patience=1)
    stopper.update(0, 3.0)
    assert stopper.update(1, 3.0) == (False, True)


def test_train_stops_on_scripted_validation(tiny_split):
    seq = [5.0, 4.0, 4.1, 4.2, 4.3]
    model = build_model(tiny_config())
    _, state = train(model, *tiny_split, _cfg(epochs=5, patience=2), evaluator=lambda m, e: seq[e])
    assert state.stopped_early
    assert state.epoch == 3 and state.best_epoch == 1 and state.best_val_mae == 4.0
    assert [h["val_mae"] for h in state.history] == seq[:4]


def test_train_runs_all_epochs_when_improving(tiny_split):
    model = build_model(tiny_config(Variant.BASELINE))
    _, state = train(model, *tiny_split, _cfg(epochs=3, patience=5), evaluator=lambda m, e: 10.0 - e)
    assert not state.stopped_early
    assert state.epoch == 2 and state.best_epoch == 2
    assert state.epochs_since_improvement == 0


def test_best_weights_are_restored(tiny_split):
    train_data, val_data = tiny_split
    model = build_model(tiny_config())
    model, state = train(model, train_data, val_data, _cfg(epochs=5, lr0=3e-3))
    assert state.best_val_mae == min(h["val_mae"] for h in state.history)
    assert abs(final_head_mae(model, val_data, 4) - state.best_val_mae) <= 1e-6


def test_single_sample_batch_is_merged():
    parts = _batches(9, 4, np.arange(9))
    assert [len(p) for p in parts] == [4, 5]
    assert [len(p) for p in _batches(1, 4, np.arange(1))] == [1]


# ---- artifacts, resume, determinism ------------------------------------------

def test_checkpoints_and_log_written(tiny_split, tmp_path):
    model = build_model(tiny_config())
    train(model, *tiny_split, _cfg(epochs=2), checkpoint_dir=tmp_path, log_path=tmp_path / "log.jsonl")
    for name in ("best.npz", "last.npz", "final.npz"):
        assert (tmp_path / name).is_file()
    records = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    epochs = [r for r in records if r["kind"] == "epoch"]
    assert len(epochs) == 2 and all("l_total" in r and "val_mae" in r for r in epochs)
    assert any(r["kind"] == "step" and "l_ba_d2" in r for r in records)


def test_identical_seeds_give_identical_runs(tiny_split):
    runs = []
    for _ in range(2):
        torch.manual_seed(0)
        model = build_model(tiny_config())
        model, state = train(model, *tiny_split, _cfg(epochs=2))
        runs.append((state.history, predict_heads(model, tiny_split[1].X, 4)["age"]["final"]))
    assert runs[0][0] == runs[1][0]
    np.testing.assert_array_equal(runs[0][1], runs[1][1])


class _Interrupt(Exception):
    pass


def test_resume_continues_at_next_epoch(tiny_split, tmp_path):
    train_data, val_data = tiny_split
    cfg = _cfg(epochs=4)

    torch.manual_seed(0)
    full, full_state = train(build_model(tiny_config()), train_data, val_data, cfg)

    def crash_at_2(model, epoch):
        if epoch == 2:
            raise _Interrupt
        return final_head_mae(model, val_data, cfg.batch_val)

    torch.manual_seed(0)
    with pytest.raises(_Interrupt):
        train(build_model(tiny_config()), train_data, val_data, cfg, checkpoint_dir=tmp_path, evaluator=crash_at_2)

    resumed, state = train(build_model(tiny_config()), train_data, val_data, cfg,
                           checkpoint_dir=tmp_path, resume=tmp_path / "last.npz")
    assert [h["epoch"] for h in state.history] == [0, 1, 2, 3]
    assert [h["val_mae"] for h in state.history] == pytest.approx([h["val_mae"] for h in full_state.history], abs=1e-6)
    assert state.best_epoch == full_state.best_epoch


def test_non_finite_loss_raises(tiny_split):
    train_data, val_data = tiny_split
    X = train_data.X.copy()
    X[0, 0, 0, 0, 0] = np.nan
    bad = VolumeArrays(X, train_data.age, train_data.sex, train_data.ids)  # bypasses input validation
    with pytest.raises(TrainingError) as info:
        train(build_model(tiny_config()), bad, val_data, _cfg(epochs=1))
    assert info.value.record["epoch"] == 0


def test_non_finite_volumes_rejected_up_front(tiny_cohort):
    X, age, sex = tiny_cohort
    X = X.copy()
    X[1, 2, 2, 2] = np.inf
    with pytest.raises(ParameterError):
        VolumeArrays.from_arrays(X, age, sex)


def test_config_validation():
    for bad in (dict(epochs=0), dict(patience=0), dict(lr0=0.0), dict(batch_train=0)):
        with pytest.raises(ParameterError):
            TrainConfig(**bad)


# ---- grid search --------------------------------------------------------------

def test_grid_single_point():
    calls = []
    res = grid_search(lambda w: calls.append(w.as_tuple()) or 1.0, {"alpha": [0.3], "beta": [0.7], "gamma": [0.5]})
    assert res.best.as_tuple() == (0.3, 0.7, 0.5)
    assert calls == [(0.3, 0.7, 0.5)]


def test_grid_fine_stage_centres_on_scripted_winner():
    coarse = {"alpha": [0.0, 0.5, 1.0], "beta": [0.0, 0.5, 1.0], "gamma": [0.0, 0.5, 1.0]}
    target = (0.5, 1.0, 0.0)

    def objective(w):
        return sum(abs(a - b) for a, b in zip(w.as_tuple(), target)) + 1.0

    res = grid_search(objective, coarse, fine_points=5)
    assert res.coarse_best == target
    assert res.fine_grid["alpha"] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert res.fine_grid["beta"] == [0.5, 0.75, 1.0]
    assert res.fine_grid["gamma"] == [0.0, 0.25, 0.5]
    assert res.best.as_tuple() == target and res.best_mae == 1.0
    # brute force over every evaluated point agrees
    assert min(res.evaluations, key=lambda e: (e[1], e[0]))[0] == target


def test_grid_ties_prefer_lexicographic_smallest():
    res = grid_search(lambda w: 2.0, {"alpha": [0.2, 0.1], "beta": [0.9, 0.4], "gamma": [1.0, 0.5]}, fine_points=1)
    assert res.best.as_tuple() == (0.1, 0.4, 0.5)


def test_grid_rejects_bad_axes():
    with pytest.raises(ParameterError):
        grid_search(lambda w: 0.0, {"alpha": [0.1], "beta": [0.2]})


# ---- gradient check -----------------------------------------------------------

def _gc_inputs(tiny_cohort):
    X, age, sex = tiny_cohort
    model = build_model(tiny_config())
    model.set_age_scaling(age[:4].mean(), age[:4].std())
    return model, X[:4], age[:4], sex[:4]


def test_gradient_check_pure_reconstruction(tiny_cohort):
    model, X, age, sex = _gc_inputs(tiny_cohort)
    rep = gradient_check(model, LossWeights(1.0, 0.7, 0.5), X, age, sex, n_params_sampled=20)
    assert rep.n_sampled == 20
    assert rep.max_rel_error < 1e-4


def test_gradient_check_full_objective(tiny_cohort):
    model, X, age, sex = _gc_inputs(tiny_cohort)
    rep = gradient_check(model, LossWeights(0.3, 0.7, 0.5), X, age, sex, n_params_sampled=20)
    assert rep.max_rel_error < 1e-3


def test_gradient_check_detects_corrupted_loss(tiny_cohort):
    model, X, age, sex = _gc_inputs(tiny_cohort)
    rep = gradient_check(model, LossWeights(0.3, 0.7, 0.5), X, age, sex, n_params_sampled=20, corrupt=True)
    assert rep.max_rel_error > 1e-3


def test_bce_gradient_finite_at_saturation():
    model = build_model(tiny_config()).double()
    for head in [model.sex_final] + list(model.sex_shallow.values()):
        torch.nn.init.zeros_(head.mlp[-1].weight)
        torch.nn.init.constant_(head.mlp[-1].bias, 40.0)  # sigmoid saturates to 1
    x = torch.zeros(2, 1, 16, 16, 16, dtype=torch.float64)
    out = model(x)
    loss = compute_losses(out, x, torch.tensor([30.0, 50.0]), torch.tensor([0.0, 0.0]),
                          LossWeights(0.3, 0.5, 0.5), Variant.DSMT_AE).l_total
    loss.backward()
    assert math.isfinite(loss.item())
    assert all(torch.isfinite(p.grad).all() for p in model.parameters() if p.grad is not None)
