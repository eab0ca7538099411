"""Regression error metrics for brain-age predictions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..exceptions import DegenerateTargetError, ParameterError
from ..validation import check_same_length


def mae(y, y_hat):
    y, y_hat = check_same_length(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def error_sd(y, y_hat):
    """Population (1/N) standard deviation of the signed residuals y - y_hat."""
    y, y_hat = check_same_length(y, y_hat)
    e = y - y_hat
    return float(np.sqrt(np.mean((e - e.mean()) ** 2)))


def rmse(y, y_hat):
    y, y_hat = check_same_length(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def r2(y, y_hat):
    y, y_hat = check_same_length(y, y_hat)
    if len(y) < 2:
        raise DegenerateTargetError("R^2 needs at least two samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTargetError("R^2 is undefined for constant targets")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


@dataclass
class MetricsReport:
    n: int
    mae: Optional[float] = None
    sd: Optional[float] = None
    rmse: Optional[float] = None
    r2: Optional[float] = None

    @classmethod
    def compute(cls, y, y_hat):
        """Metrics for one group; an empty group gets ``n=0`` and null metrics,
        and R^2 is null when undefined (fewer than two subjects or constant ages)."""
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
        if len(y) != len(y_hat):
            raise ParameterError("y and y_hat must have equal lengths")
        if len(y) == 0:
            return cls(0)
        try:
            r = r2(y, y_hat)
        except DegenerateTargetError:
            r = None
        return cls(len(y), mae(y, y_hat), error_sd(y, y_hat), rmse(y, y_hat), r)

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}
