from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import clone

from ..model import VARIANT_ORDER, Variant
from .metrics import MetricsReport

logger = logging.getLogger(__name__)

# (label, upper edge); bracket i holds ages in (upper[i-1], upper[i]]
AGE_BRACKETS = (
    ("<=25", 25.0),
    ("26-35", 35.0),
    ("36-45", 45.0),
    ("46-55", 55.0),
    ("56-65", 65.0),
    ("66-75", 75.0),
    (">75", math.inf),
)
SEX_LABELS = {0: "female", 1: "male"}
VARIANT_LABELS = {
    Variant.BASELINE: "Baseline",
    Variant.AE: "AE",
    Variant.MTL_AE: "MTL-AE",
    Variant.DS_AE: "DS-AE",
    Variant.DSMT_AE: "DSMT-AE",
}


def bracket_of(age, brackets=AGE_BRACKETS):
    for label, upper in brackets:
        if age <= upper:
            return label
    return brackets[-1][0]


@dataclass
class StratifiedReport:
    overall: MetricsReport
    by_sex: dict
    by_age_bracket: dict  # ordered label -> MetricsReport

    def to_dict(self):
        return {
            "overall": self.overall.to_dict(),
            "by_sex": {k: v.to_dict() for k, v in self.by_sex.items()},
            "by_age_bracket": {k: v.to_dict() for k, v in self.by_age_bracket.items()},
        }


def stratify(y, y_hat, sexes, brackets=AGE_BRACKETS) -> StratifiedReport:
    """Overall, per-sex and per-age-bracket metrics. Brackets are indexed by true age."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    sexes = np.asarray(sexes).reshape(-1)
    if not len(y) == len(y_hat) == len(sexes):
        raise ValueError("y, y_hat and sexes must be aligned")
    by_sex = {name: MetricsReport.compute(y[sexes == code], y_hat[sexes == code])
              for code, name in SEX_LABELS.items()}
    labels = np.array([bracket_of(a, brackets) for a in y])
    by_bracket = {label: MetricsReport.compute(y[labels == label], y_hat[labels == label])
                  for label, _ in brackets}
    return StratifiedReport(MetricsReport.compute(y, y_hat), by_sex, by_bracket)


@dataclass
class AblationRow:
    variant: Variant
    report: Optional[StratifiedReport] = None
    error: Optional[str] = None
    ensemble: Optional[dict] = None
    predictions: Optional[np.ndarray] = field(default=None, repr=False)
    estimator: object = field(default=None, repr=False)  # the fitted clone


def run_ablation(estimator, X_train, y_train, sex_train, X_val, y_val, sex_val,
                 variants=VARIANT_ORDER, X_test=None, y_test=None, sex_test=None):
    """Train one clone of ``estimator`` per variant under an identical protocol.

    Each clone uses the given validation set for early stopping and ensemble
    weights and is scored on the test set (the validation set when no test
    set is given). A variant that raises becomes an error row.
    """
    if X_test is None:
        X_test, y_test, sex_test = X_val, y_val, sex_val
    rows = []
    for v in variants:
        v = Variant.parse(v)
        est = clone(estimator).set_params(variant=v.value)
        try:
            est.fit(X_train, y_train, sex=sex_train, eval_set=(X_val, y_val, sex_val))
            pred = est.predict(X_test)
            ens = est.ensemble_weights_.to_dict() if est.ensemble_weights_ is not None else None
            rows.append(AblationRow(v, stratify(y_test, pred, sex_test), ensemble=ens, predictions=pred, estimator=est))
        except Exception as exc:  # a failed variant must not sink the whole comparison
            logger.exception("variant %s failed", v.value)
            rows.append(AblationRow(v, error=f"{type(exc).__name__}: {exc}"))
    return rows


TABLE_COLUMNS = (
    "Overall MAE", "Overall RMSE", "Overall R2",
    "Male MAE", "Male RMSE", "Male R2",
    "Female MAE", "Female RMSE", "Female R2",
)


def _fmt(x, digits=2):
    return "n/a" if x is None else f"{x:.{digits}f}"


def ablation_table_rows(rows):
    """One list of 9 cells per variant: MAE +/- SD, RMSE, R2 for overall, male, female."""
    out = []
    for row in rows:
        if row.report is None:
            out.append([VARIANT_LABELS[row.variant]] + [f"error: {row.error}"] + [""] * 8)
            continue
        cells = []
        for group in (row.report.overall, row.report.by_sex["male"], row.report.by_sex["female"]):
            cells.append("n/a" if group.mae is None else f"{group.mae:.2f} ± {group.sd:.2f}")
            cells.append(_fmt(group.rmse))
            cells.append(_fmt(group.r2))
        out.append([VARIANT_LABELS[row.variant]] + cells)
    return out


def format_ablation_table(rows):
    """Plain-text table laid out like the published comparison table."""
    body = ablation_table_rows(rows)
    header = ["Model"] + list(TABLE_COLUMNS)
    widths = [max(len(str(r[i])) for r in body + [header]) for i in range(len(header))]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in body]) + "\n"


def ablation_to_dict(rows):
    return [{"variant": r.variant.value,
             "report": None if r.report is None else r.report.to_dict(),
             "ensemble": r.ensemble, "error": r.error} for r in rows]
