"""``dsmtae`` command-line interface.

Exit codes: 0 success, 1 verification failed, 2 config error, 3 data error,
4 training error, 5 i/o error, 6 checkpoint/config mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import checkpoint as ckpt
from .config import load_config
from .ensemble import EnsembleWeights, ensemble_predict, fit_ensemble_weights
from .estimator import DSMTAERegressor
from .evaluation import ablation_to_dict, emit_plots, format_ablation_table, run_ablation, stratify
from .exceptions import (
    CompatibilityError,
    ConfigurationError,
    DSMTError,
    FormatError,
    MetadataError,
    ParameterError,
    TrainingError,
)
from .experiment import experiment_dir, load_dataset, synth_dataset, write_json, write_predictions
from .losses import LossWeights
from .model import ModelConfig, build_model
from .trainer import gradient_check, grid_search, predict_heads, set_determinism, train, training_objective
from .volume_data.phantom import generate_cohort
from .volume_data.types import PhantomConfig

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_IO = 5
EXIT_COMPAT = 6

THREADS_ENV = "DSMTAE_NUM_THREADS"

logger = logging.getLogger("dsmtae")


def _exit_code(exc):
    if isinstance(exc, CompatibilityError):
        return EXIT_COMPAT
    if isinstance(exc, (ConfigurationError, ParameterError)):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, MetadataError)):
        return EXIT_DATA
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_DATA


def _config(args):
    overrides = {"seed": args.seed}
    if args.deterministic:
        overrides["deterministic"] = True
    return load_config(args.config, overrides)


def _out_dir(args, cfg, default_root="runs"):
    out = Path(args.out) if args.out else experiment_dir(default_root, cfg)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _estimator(cfg, **overrides):
    m, t = cfg.model, cfg.train
    params = dict(variant=m.variant.value, block_channels=m.block_channels,
                  supervision_depths=m.supervision_depths, latent_dim=m.latent_dim, head_hidden=m.head_hidden,
                  dropout_rate=m.dropout_rate, alpha=t.loss_weights.alpha, beta=t.loss_weights.beta,
                  gamma=t.loss_weights.gamma, eta=t.loss_weights.eta, epochs=t.epochs, batch_size=t.batch_train,
                  val_batch_size=t.batch_val, lr=t.lr0, patience=t.patience, augmentation=t.augmentation,
                  random_state=cfg.seed, deterministic=cfg.deterministic)
    params.update(overrides)
    return DSMTAERegressor(**params)


def _ensemble_for(model, data, batch):
    heads = predict_heads(model, data.X, batch)
    if not model.depths:
        return heads, None, heads["age"]["final"]
    shallow = {d: heads["age"][d] for d in model.depths}
    w = fit_ensemble_weights(data.age, heads["age"]["final"], shallow)
    return heads, w, ensemble_predict(heads["age"]["final"], shallow, w)


# -- commands ------------------------------------------------------------------

def cmd_synth(args):
    cfg = _config(args)
    if cfg.phantom is None or cfg.phantom_n < 1:
        raise ParameterError("synth needs data.phantom.n >= 1")
    out = Path(args.out or cfg.raw.get("data", {}).get("root") or "data")
    if out.exists() and any(out.iterdir()):
        if not args.force:
            print(f"refusing to overwrite non-empty {out}; pass --force", file=sys.stderr)
            return EXIT_IO
        shutil.rmtree(out)
    manifest = synth_dataset(cfg, out)
    print(json.dumps({"manifest": str(manifest), "n": cfg.phantom_n}))
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    train_data, val_data = load_dataset(cfg)
    out = _out_dir(args, cfg)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=True))
    set_determinism(cfg.deterministic, cfg.seed)
    resume = None
    if args.checkpoint:
        meta, _ = ckpt.read_checkpoint(args.checkpoint)
        if ModelConfig.from_dict(meta["model_config"]).to_dict() != cfg.model.to_dict():
            raise CompatibilityError("resume checkpoint was trained with a different model config")
        resume = args.checkpoint
    model = build_model(cfg.model)
    model, state = train(model, train_data, val_data, cfg.train, checkpoint_dir=out,
                         log_path=out / "train_log.jsonl", resume=resume)
    summary = {"best_val_mae": state.best_val_mae, "best_epoch": state.best_epoch,
               "epochs_run": state.epoch + 1, "stopped_early": state.stopped_early, "out": str(out)}
    write_json(out / "train_summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def _load_model(cfg, path):
    model, meta, _ = ckpt.load_checkpoint(path, expected_config=cfg.model)
    return model.eval(), meta


def cmd_eval(args):
    cfg = _config(args)
    if not args.checkpoint:
        raise ConfigurationError("eval needs --checkpoint")
    model, _ = _load_model(cfg, args.checkpoint)
    _, val_data = load_dataset(cfg)
    out = _out_dir(args, cfg)
    heads, weights, pred = _ensemble_for(model, val_data, cfg.train.batch_val)
    write_predictions(out / "predictions.csv", val_data, heads["age"], pred, model.depths)
    report = {"variant": model.cfg.variant.value, "n": len(val_data),
              "final_head": stratify(val_data.age, heads["age"]["final"], val_data.sex).to_dict(),
              "prediction": stratify(val_data.age, pred, val_data.sex).to_dict()}
    if weights is not None:
        report["ensemble"] = weights.to_dict()
        write_json(out / "ensemble.json", weights.to_dict())
    if heads["sex"]:
        report["sex_accuracy"] = float(np.mean((heads["sex"]["final"] >= 0.5) == val_data.sex))
    write_json(out / "report.json", report)
    (out / "report.txt").write_text(_report_text(report))
    if cfg.eval.get("plots", True):
        emit_plots(val_data.age, {model.cfg.variant.value: pred}, val_data.sex, out / "plots", val_data.ids)
    print(json.dumps({"out": str(out), "mae": report["prediction"]["overall"]["mae"]}))
    return EXIT_OK


def _report_text(report):
    lines = [f"variant: {report['variant']}  n={report['n']}"]
    o = report["prediction"]["overall"]
    lines.append(f"overall  MAE {o['mae']:.3f} ± {o['sd']:.3f}  RMSE {o['rmse']:.3f}  R2 {_f(o['r2'])}")
    for k, m in report["prediction"]["by_sex"].items():
        lines.append(f"{k:<8} n={m['n']:<4} MAE {_f(m['mae'])}  RMSE {_f(m['rmse'])}  R2 {_f(m['r2'])}")
    for k, m in report["prediction"]["by_age_bracket"].items():
        lines.append(f"{k:<8} n={m['n']:<4} MAE {_f(m['mae'])} ± {_f(m['sd'])}")
    if "ensemble" in report:
        lines.append(f"ensemble rho={report['ensemble']['rho']:.2f} omega={report['ensemble']['omega']}")
    return "\n".join(lines) + "\n"


def _f(x):
    return "n/a" if x is None else f"{x:.3f}"


def cmd_predict(args):
    cfg = _config(args)
    if not args.checkpoint:
        raise ConfigurationError("predict needs --checkpoint")
    model, meta = _load_model(cfg, args.checkpoint)
    train_data, val_data = load_dataset(cfg)
    data = val_data if args.split == "val" else train_data
    heads = predict_heads(model, data.X, cfg.train.batch_val)
    weights = None
    side_file = Path(args.checkpoint).with_name("ensemble.json")
    if (meta.get("extra") or {}).get("ensemble"):
        weights = EnsembleWeights.from_dict(meta["extra"]["ensemble"])
    elif side_file.is_file():
        weights = EnsembleWeights.from_dict(json.loads(side_file.read_text()))
    pred = heads["age"]["final"]
    if weights is not None and model.depths:
        pred = ensemble_predict(pred, {d: heads["age"][d] for d in model.depths}, weights)
    out = _out_dir(args, cfg)
    write_predictions(out / "predictions.csv", data, heads["age"], pred, model.depths)
    print(json.dumps({"out": str(out / "predictions.csv"), "n": len(data)}))
    return EXIT_OK


def cmd_ensemble_search(args):
    cfg = _config(args)
    if not args.checkpoint:
        raise ConfigurationError("ensemble-search needs --checkpoint")
    model, _ = _load_model(cfg, args.checkpoint)
    _, val_data = load_dataset(cfg)
    _, weights, pred = _ensemble_for(model, val_data, cfg.train.batch_val)
    result = {"ensemble": None if weights is None else weights.to_dict(),
              "val_mae_ensemble": float(np.mean(np.abs(pred - val_data.age)))}
    dest = Path(args.out) / "ensemble.json" if args.out else Path(args.checkpoint).with_name("ensemble.json")
    dest.parent.mkdir(parents=True, exist_ok=True)
    if weights is not None:
        write_json(dest, weights.to_dict())
    print(json.dumps(result))
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args)
    train_data, val_data = load_dataset(cfg)
    out = _out_dir(args, cfg)
    rows = run_ablation(_estimator(cfg), train_data.X, train_data.age, train_data.sex,
                        val_data.X, val_data.age, val_data.sex)
    table = format_ablation_table(rows)
    (out / "ablation.txt").write_text(table)
    write_json(out / "ablation.json", ablation_to_dict(rows))
    preds = {r.variant.value: r.predictions for r in rows if r.predictions is not None}
    if preds and cfg.eval.get("plots", True):
        emit_plots(val_data.age, preds, val_data.sex, out / "plots", val_data.ids)
    print(table, end="")
    return EXIT_OK


def cmd_grid(args):
    cfg = _config(args)
    train_data, val_data = load_dataset(cfg)
    coarse = cfg.grid.get("coarse")
    if not coarse:
        raise ConfigurationError("grid.coarse must list alpha, beta and gamma values")
    objective = training_objective(train_data, val_data, cfg.model, cfg.train,
                                   int(cfg.grid.get("epochs_per_point", 10)))
    res = grid_search(objective, coarse, int(cfg.grid.get("fine_points", 5)), cfg.train.loss_weights.eta)
    out = _out_dir(args, cfg)
    result = {"best": res.best.to_dict(), "best_mae": res.best_mae, "coarse_best": res.coarse_best,
              "fine_grid": res.fine_grid, "evaluations": res.evaluations}
    write_json(out / "grid_search.json", result)
    print(json.dumps({"best": res.best.to_dict(), "best_mae": res.best_mae}))
    return EXIT_OK


def run_gradcheck(cfg, corrupt=False):
    """Tiny float64 model on random phantoms; returns a JSON-able report."""
    g = cfg.gradcheck
    side = int(g.get("side", 16))
    n_params = int(g.get("n_params", 20))
    mcfg = ModelConfig(side=side, block_channels=g.get("block_channels", (4, 8, 8, 16, 16)),
                       supervision_depths=cfg.model.supervision_depths, latent_dim=int(g.get("latent_dim", 16)),
                       head_hidden=g.get("head_hidden", (8, 8)), dropout_rate=cfg.model.dropout_rate,
                       variant=cfg.model.variant).validate()
    phantom = PhantomConfig(side=side, base_cortex_thickness=2.2, cortex_thinning_rate=0.017,
                            ventricle_growth_rate=0.03, base_ventricle_radius=0.8, rng_seed=cfg.seed)
    samples = generate_cohort(int(g.get("n_samples", 4)), phantom, seed=cfg.seed)
    X = np.stack([s.voxels for s in samples])
    age = np.array([s.age for s in samples])
    sex = np.array([s.sex for s in samples])
    torch.manual_seed(cfg.seed)
    model = build_model(mcfg)
    model.set_age_scaling(age.mean(), age.std() or 1.0)
    w = cfg.train.loss_weights
    checks = [("full", w, float(g.get("tol", 1e-3))),
              ("reconstruction_only", LossWeights(1.0, w.beta, w.gamma, w.eta), float(g.get("tol_reconstruction", 1e-4)))]
    results = []
    for name, weights, tol in checks:
        if name == "reconstruction_only" and not mcfg.variant.has_decoder:
            continue
        rep = gradient_check(model, weights, X, age, sex, n_params, seed=cfg.seed, corrupt=corrupt)
        results.append({"check": name, "max_rel_error": rep.max_rel_error, "tolerance": tol,
                        "n_sampled": rep.n_sampled, "passed": rep.passed(tol)})
    return {"variant": mcfg.variant.value, "side": side, "checks": results,
            "passed": all(r["passed"] for r in results)}


def cmd_gradcheck(args):
    cfg = _config(args)
    report = run_gradcheck(cfg, corrupt=args.corrupt_loss)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "gradcheck.json", report)
    print(json.dumps(report))
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "ensemble-search": cmd_ensemble_search,
    "grid-search": cmd_grid,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="dsmtae", description="Deeply supervised multitask autoencoder experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--checkpoint", default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "predict":
            p.add_argument("--split", choices=("train", "val"), default="val")
        if name == "gradcheck":
            p.add_argument("--corrupt-loss", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get(THREADS_ENV)
    if threads:
        torch.set_num_threads(int(threads))
    try:
        return COMMANDS[args.command](args)
    except (DSMTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
