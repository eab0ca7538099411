from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import error_sd, mae  # noqa: E402
from .report import AGE_BRACKETS, SEX_LABELS, stratify  # noqa: E402

Z_95 = 1.96


def band_half_width(y, y_hat):
    """Half-width of the 95% band drawn around the identity line."""
    return Z_95 * error_sd(y, y_hat)


def _safe_name(name):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in str(name))


def _scatter(path, y, y_hat, sexes, title):
    half = band_half_width(y, y_hat)
    fig, ax = plt.subplots(figsize=(5, 5))
    lo, hi = float(min(y.min(), y_hat.min())), float(max(y.max(), y_hat.max()))
    pad = 0.05 * (hi - lo or 1.0)
    line = np.array([lo - pad, hi + pad])
    ax.fill_between(line, line - half, line + half, color="0.85", label=f"95% band (±{half:.2f})")
    ax.plot(line, line, "k--", lw=1, label="identity")
    for code, name in SEX_LABELS.items():
        m = sexes == code
        if m.any():
            ax.scatter(y[m], y_hat[m], s=12, label=name, color="tab:red" if code == 0 else "tab:blue")
    ax.set_xlabel("chronological age")
    ax.set_ylabel("predicted age")
    ax.set_title(title)
    ax.text(0.03, 0.95, f"MAE = {mae(y, y_hat):.2f} ± {error_sd(y, y_hat):.2f}",
            transform=ax.transAxes, va="top")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return half


def _bars(path, per_model):
    labels = [b for b, _ in AGE_BRACKETS]
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / max(len(per_model), 1)
    x = np.arange(len(labels))
    for i, (name, rep) in enumerate(per_model.items()):
        means = [rep.by_age_bracket[b].mae or 0.0 for b in labels]
        sds = [rep.by_age_bracket[b].sd or 0.0 for b in labels]
        ax.bar(x + i * width, means, width, yerr=sds, capsize=2, label=name)
    ax.set_xticks(x + width * (len(per_model) - 1) / 2)
    ax.set_xticklabels(labels)
    ax.set_xlabel("age bracket")
    ax.set_ylabel("MAE (years)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def emit_plots(y, y_hat, sexes, out_dir, subject_ids=None, fmt="svg"):
    """Write scatter and age-bracket bar plots plus the tables behind them.

    ``y_hat`` is one prediction array or a ``{model name: predictions}``
    dict. Returns ``{"files": [...], "band_half_width": {model: float}}``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    y = np.asarray(y, dtype=np.float64)
    sexes = np.asarray(sexes)
    preds = y_hat if isinstance(y_hat, dict) else {"model": y_hat}
    ids = list(subject_ids) if subject_ids is not None else [str(i) for i in range(len(y))]
    files, halves, reports = [], {}, {}

    for name, p in preds.items():
        p = np.asarray(p, dtype=np.float64)
        stem = _safe_name(name)
        halves[name] = _scatter(out_dir / f"scatter_{stem}.{fmt}", y, p, sexes, name)
        table = out_dir / f"scatter_{stem}.csv"
        with open(table, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", "y_true", "y_pred", "sex", "residual", "band_half_width"])
            for sid, t, q, s in zip(ids, y, p, sexes):
                w.writerow([sid, repr(float(t)), repr(float(q)), int(s), repr(float(t - q)), repr(halves[name])])
        files += [out_dir / f"scatter_{stem}.{fmt}", table]
        reports[name] = stratify(y, p, sexes)

    bars = out_dir / f"bracket_mae.{fmt}"
    _bars(bars, reports)
    table = out_dir / "bracket_mae.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "bracket", "n", "mae", "sd"])
        for name, rep in reports.items():
            for b, m in rep.by_age_bracket.items():
                w.writerow([name, b, m.n, "" if m.mae is None else repr(m.mae), "" if m.sd is None else repr(m.sd)])
    files += [bars, table]
    return {"files": [str(f) for f in files], "band_half_width": halves}
