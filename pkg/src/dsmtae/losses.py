"""Reconstruction, age and sex losses and their hierarchical combination.

    L_BA    = gamma * L_BA_f + (1 - gamma) * sum_d eta_d * L_BA_d
    L_GC    = gamma * L_GC_f + (1 - gamma) * sum_d eta_d * L_GC_d
    L_DST   = beta * L_BA + (1 - beta) * L_GC
    L_total = alpha * L_AE + (1 - alpha) * L_DST

``ds_combine`` and ``total_loss`` only use arithmetic, so they accept
python floats as well as torch scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch

from .exceptions import ParameterError, ShapeError
from .model import ModelOutputs, Variant

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    alpha: float = 0.3
    beta: float = 0.7
    gamma: float = 0.5
    eta: Optional[dict] = None  # depth -> weight; None means uniform over depths

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")
            setattr(self, name, value)
        if self.eta is not None:
            self.eta = {int(d): float(w) for d, w in self.eta.items()}
            if any(not math.isfinite(w) or w < 0 for w in self.eta.values()):
                raise ParameterError("eta weights must be finite and non-negative")
            if self.eta and abs(sum(self.eta.values()) - 1.0) > 1e-9:
                raise ParameterError(f"eta weights must sum to 1, got {sum(self.eta.values())}")

    def eta_for(self, depths):
        depths = tuple(depths)
        if self.eta is None:
            return {d: 1.0 / len(depths) for d in depths} if depths else {}
        if set(self.eta) != set(depths):
            raise ParameterError(f"eta keys {sorted(self.eta)} do not match depths {sorted(depths)}")
        return dict(self.eta)

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma)

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "eta": None if self.eta is None else {str(k): v for k, v in self.eta.items()}}


@dataclass
class LossBreakdown:
    l_ae: object = 0.0
    l_ba_final: object = 0.0
    l_ba_shallow: dict = field(default_factory=dict)
    l_gc_final: object = 0.0
    l_gc_shallow: dict = field(default_factory=dict)
    l_ba: object = 0.0
    l_gc: object = 0.0
    l_dst: object = 0.0
    l_total: object = 0.0

    def to_record(self):
        """Flat ``{name: float}`` view for logging."""
        rec = {}
        for name in ("l_ae", "l_ba_final", "l_gc_final", "l_ba", "l_gc", "l_dst", "l_total"):
            rec[name] = float(_scalar(getattr(self, name)))
        for d, v in self.l_ba_shallow.items():
            rec[f"l_ba_d{d}"] = float(_scalar(v))
        for d, v in self.l_gc_shallow.items():
            rec[f"l_gc_d{d}"] = float(_scalar(v))
        return rec


def reconstruction_loss(x, x_hat):
    if tuple(x.shape) != tuple(x_hat.shape):
        raise ShapeError(f"reconstruction shape {tuple(x_hat.shape)} != input shape {tuple(x.shape)}")
    return ((x - x_hat) ** 2).mean()


def age_loss(y, y_hat):
    y = torch.as_tensor(y)
    y_hat = torch.as_tensor(y_hat)
    if y.numel() == 0:
        raise ParameterError("age loss needs at least one sample")
    if y.shape != y_hat.shape:
        raise ShapeError(f"age targets {tuple(y.shape)} vs predictions {tuple(y_hat.shape)}")
    return (y - y_hat).abs().mean()


def sex_loss(y, p_hat, eps=PROB_EPS):
    y = torch.as_tensor(y, dtype=torch.as_tensor(p_hat).dtype)
    p = torch.as_tensor(p_hat).clamp(eps, 1.0 - eps)
    if y.shape != p.shape:
        raise ShapeError(f"sex targets {tuple(y.shape)} vs probabilities {tuple(p.shape)}")
    return -(y * torch.log(p) + (1 - y) * torch.log1p(-p)).mean()


def ds_combine(final_loss, shallow_losses, gamma, eta):
    """gamma * final + (1 - gamma) * sum_d eta_d * shallow_d."""
    if set(shallow_losses) != set(eta):
        raise ParameterError(f"depth keys differ: losses {sorted(shallow_losses)} vs eta {sorted(eta)}")
    shallow = sum(eta[d] * shallow_losses[d] for d in sorted(shallow_losses))
    return gamma * final_loss + (1.0 - gamma) * shallow


def total_loss(parts: LossBreakdown, w: LossWeights, variant=Variant.DSMT_AE) -> LossBreakdown:
    """Fill in l_ba, l_gc, l_dst and l_total from the component losses.

    Variants lacking a term drop it and move its weight onto the rest:
    BASELINE uses L_BA_f alone, AE blends L_AE with L_BA_f, MTL_AE runs the
    full objective with gamma=1 and DS_AE with beta=1.
    """
    variant = Variant.parse(variant)
    if not isinstance(w, LossWeights):
        raise ParameterError("loss weights must be a LossWeights instance")
    out = LossBreakdown(parts.l_ae, parts.l_ba_final, dict(parts.l_ba_shallow),
                        parts.l_gc_final, dict(parts.l_gc_shallow))
    alpha, beta, gamma = w.as_tuple()
    if not variant.has_decoder:
        alpha = 0.0
    if not variant.has_sex:
        beta = 1.0
    if not variant.has_shallow:
        gamma = 1.0

    if variant.has_shallow:
        eta = w.eta_for(sorted(parts.l_ba_shallow))
        out.l_ba = ds_combine(parts.l_ba_final, out.l_ba_shallow, gamma, eta)
        if variant.has_sex:
            out.l_gc = ds_combine(parts.l_gc_final, out.l_gc_shallow, gamma, eta)
    else:
        out.l_ba = parts.l_ba_final
        if variant.has_sex:
            out.l_gc = parts.l_gc_final

    out.l_dst = beta * out.l_ba + (1.0 - beta) * out.l_gc if variant.has_sex else out.l_ba
    out.l_total = alpha * out.l_ae + (1.0 - alpha) * out.l_dst if variant.has_decoder else out.l_dst
    return out


def compute_losses(outputs: ModelOutputs, x, age, sex, w: LossWeights, variant) -> LossBreakdown:
    """Evaluate every component loss on one forward pass and combine them."""
    variant = Variant.parse(variant)
    age = torch.as_tensor(age, dtype=outputs.latent.dtype)
    parts = LossBreakdown()
    if variant.has_decoder:
        parts.l_ae = reconstruction_loss(x, outputs.reconstruction)
    parts.l_ba_final = age_loss(age, outputs.age_preds[0])
    depths = outputs.depths
    if variant.has_shallow:
        parts.l_ba_shallow = {d: age_loss(age, p) for d, p in zip(depths, outputs.age_preds[1:])}
    if variant.has_sex:
        sex = torch.as_tensor(sex, dtype=outputs.latent.dtype)
        parts.l_gc_final = sex_loss(sex, outputs.sex_probs[0])
        if variant.has_shallow:
            parts.l_gc_shallow = {d: sex_loss(sex, p) for d, p in zip(depths, outputs.sex_probs[1:])}
    return total_loss(parts, w, variant)


def _scalar(v):
    return v.detach() if isinstance(v, torch.Tensor) else v
