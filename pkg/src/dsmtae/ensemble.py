"""Self-ensembling of the final and shallow age regressors of one network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError

RHO_GRID = np.round(np.linspace(0.0, 1.0, 21), 10)
_TIE_RTOL = 1e-12


@dataclass
class EnsembleWeights:
    rho: float = 1.0
    omega: dict = field(default_factory=dict)  # depth -> weight, summing to 1

    def __post_init__(self):
        self.rho = float(self.rho)
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [0, 1], got {self.rho}")
        self.omega = {int(d): float(w) for d, w in self.omega.items()}
        if any(not math.isfinite(w) or w < 0 for w in self.omega.values()):
            raise ParameterError("omega weights must be finite and non-negative")
        if self.omega and abs(sum(self.omega.values()) - 1.0) > 1e-9:
            raise ParameterError(f"omega weights must sum to 1, got {sum(self.omega.values())}")

    def to_dict(self):
        return {"rho": self.rho, "omega": {str(d): w for d, w in sorted(self.omega.items())}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rho"], {int(k): v for k, v in d.get("omega", {}).items()})


def ensemble_predict(final_pred, shallow_preds, w: EnsembleWeights):
    """rho * final + (1 - rho) * sum_d omega_d * shallow_d.

    ``shallow_preds`` maps depth -> predictions and must carry exactly the
    depths in ``w.omega``. Works elementwise on scalars or arrays.
    """
    if set(shallow_preds) != set(w.omega):
        raise ParameterError(f"depths {sorted(shallow_preds)} do not match omega {sorted(w.omega)}")
    final_pred = np.asarray(final_pred, dtype=np.float64)
    if not shallow_preds:
        return final_pred
    shallow = sum(w.omega[d] * np.asarray(shallow_preds[d], dtype=np.float64) for d in sorted(w.omega))
    return w.rho * final_pred + (1.0 - w.rho) * shallow


def inverse_mae_weights(y, shallow_preds):
    """Omega_d proportional to 1 / MAE_d. Heads with zero MAE share all weight."""
    y = np.asarray(y, dtype=np.float64)
    maes = {d: float(np.mean(np.abs(y - np.asarray(p, dtype=np.float64)))) for d, p in shallow_preds.items()}
    exact = [d for d, m in maes.items() if m == 0.0]
    if exact:
        return {d: (1.0 / len(exact) if d in exact else 0.0) for d in maes}
    inv = {d: 1.0 / m for d, m in maes.items()}
    total = sum(inv.values())
    return {d: v / total for d, v in inv.items()}


def fit_ensemble_weights(y, final_pred, shallow_preds, rho_grid=RHO_GRID) -> EnsembleWeights:
    """Fit ensemble weights from validation targets and per-head predictions.

    Omega comes from inverse shallow-head MAE; rho is the grid value with
    the lowest ensemble MAE, ties going to the largest rho. Because rho=1
    reproduces the final head exactly, the result is never worse than it.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ParameterError("validation set is empty")
    if not shallow_preds:
        return EnsembleWeights(1.0, {})
    omega = inverse_mae_weights(y, shallow_preds)
    maes = np.array([
        np.mean(np.abs(y - ensemble_predict(final_pred, shallow_preds, EnsembleWeights(r, omega))))
        for r in rho_grid
    ])
    best = maes.min()
    tied = np.flatnonzero(maes <= best + _TIE_RTOL * max(1.0, best))
    return EnsembleWeights(float(rho_grid[tied.max()]), omega)


def search_weights(model, X_val, y_val, batch_size=2) -> EnsembleWeights:
    """Run ``model`` over a validation set and fit the ensemble weights.

    ``model`` is a ``DSMTAENet``; evaluation happens in eval mode.
    """
    from .trainer import predict_heads

    if len(y_val) == 0:
        raise ParameterError("validation set is empty")
    heads = predict_heads(model, X_val, batch_size=batch_size)
    shallow = {d: heads["age"][d] for d in model.depths}
    return fit_ensemble_weights(y_val, heads["age"]["final"], shallow)
