"""3D residual autoencoder with deep-supervision bottleneck heads.

The encoder is five stride-2 residual blocks. The deepest feature map is
pooled into a latent vector ``z`` that feeds the decoder (five transposed
convolutions back to the input grid) and the final age/sex heads. Shallow
age/sex heads tap the outputs of selected encoder blocks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
from torch import nn

from .exceptions import ConfigurationError, ShapeError

PROB_EPS = 1e-7


class Variant(str, enum.Enum):
    BASELINE = "BASELINE"
    AE = "AE"
    MTL_AE = "MTL_AE"
    DS_AE = "DS_AE"
    DSMT_AE = "DSMT_AE"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(
                f"unknown variant {value!r}; choose from {[v.value for v in cls]}"
            ) from None

    @property
    def has_decoder(self):
        return self is not Variant.BASELINE

    @property
    def has_sex(self):
        return self in (Variant.MTL_AE, Variant.DSMT_AE)

    @property
    def has_shallow(self):
        return self in (Variant.DS_AE, Variant.DSMT_AE)


VARIANT_ORDER = (Variant.BASELINE, Variant.AE, Variant.MTL_AE, Variant.DS_AE, Variant.DSMT_AE)


@dataclass
class ModelConfig:
    side: int = 96
    in_channels: int = 1
    block_channels: tuple = (16, 32, 64, 128, 256)
    supervision_depths: tuple = (2, 3, 4)
    latent_dim: int = 512
    head_hidden: tuple = (128, 64)
    dropout_rate: float = 0.3
    variant: Variant = Variant.DSMT_AE

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.block_channels = tuple(int(c) for c in self.block_channels)
        self.supervision_depths = tuple(sorted({int(d) for d in self.supervision_depths}))
        self.head_hidden = tuple(int(h) for h in self.head_hidden)

    def validate(self):
        if len(self.block_channels) != 5 or min(self.block_channels) < 1:
            raise ConfigurationError("block_channels must list 5 positive channel counts")
        if any(d not in range(1, 5) for d in self.supervision_depths):
            raise ConfigurationError(
                f"supervision depths must lie in 1..4, got {self.supervision_depths}"
            )
        if self.variant.has_shallow and not self.supervision_depths:
            raise ConfigurationError(f"{self.variant.value} needs at least one supervision depth")
        if self.side < 2 or self.in_channels != 1 or self.latent_dim < 1:
            raise ConfigurationError("side must be >= 2, in_channels 1, latent_dim >= 1")
        if len(self.head_hidden) != 2 or min(self.head_hidden) < 1:
            raise ConfigurationError("head_hidden must give two positive widths")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        return self

    @property
    def depths(self):
        """Shallow-head depths actually present for this variant."""
        return self.supervision_depths if self.variant.has_shallow else ()

    def spatial_sizes(self):
        """Spatial side after each encoder block: ceil(side / 2**k)."""
        return [math.ceil(self.side / 2 ** k) for k in range(1, 6)]

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.value
        for k in ("block_channels", "supervision_depths", "head_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelOutputs:
    """Per-batch network outputs.

    ``age_preds`` and ``sex_probs`` are ordered final head first, then one
    entry per supervision depth in increasing order; each tensor has shape
    ``(B,)``. Variants without a head leave the list empty and
    ``reconstruction`` is ``None`` without a decoder.
    """

    reconstruction: Optional[torch.Tensor]
    age_preds: list
    sex_probs: list
    latent: torch.Tensor
    depths: tuple = field(default=())


class ResBlock(nn.Module):
    """stride-2 conv -> BN, plus a 1x1x1 stride-2 projection skip, then ELU."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, kernel_size=3, stride=2, padding=1, bias=False)
        self.bn = nn.BatchNorm3d(cout)
        self.skip = nn.Conv3d(cin, cout, kernel_size=1, stride=2, bias=False)
        self.act = nn.ELU()

    def forward(self, x):
        return self.act(self.bn(self.conv(x)) + self.skip(x))


class BottleneckHead(nn.Module):
    """[global average pool] -> dense -> dense -> dropout -> single output unit.

    Age heads emit ``offset + scale * raw`` with non-trainable offset/scale
    buffers, set from the training targets so the raw unit works near unit
    scale. Sex heads emit a sigmoid probability.
    """

    def __init__(self, in_features, hidden, dropout, kind, pool):
        super().__init__()
        self.kind = kind
        self.pool = nn.AdaptiveAvgPool3d(1) if pool else None
        self.mlp = nn.Sequential(
            nn.Linear(in_features, hidden[0]),
            nn.ELU(),
            nn.Linear(hidden[0], hidden[1]),
            nn.ELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden[1], 1),
        )
        if kind == "age":
            self.register_buffer("age_offset", torch.zeros(()))
            self.register_buffer("age_scale", torch.ones(()))

    def forward(self, x):
        if self.pool is not None:
            x = self.pool(x).flatten(1)
        raw = self.mlp(x).squeeze(1)
        if self.kind == "age":
            return self.age_offset + self.age_scale * raw
        return torch.sigmoid(raw).clamp(PROB_EPS, 1.0 - PROB_EPS)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        sizes = [cfg.side] + cfg.spatial_sizes()
        chans = list(cfg.block_channels)
        self.seed_shape = (chans[-1],) + (sizes[-1],) * 3
        self.fc = nn.Linear(cfg.latent_dim, chans[-1] * sizes[-1] ** 3)
        stages = []
        outs = chans[-2::-1] + [cfg.in_channels]
        cin = chans[-1]
        for k, cout in enumerate(outs):
            n_in, target = sizes[5 - k], sizes[4 - k]
            up = nn.ConvTranspose3d(cin, cout, kernel_size=3, stride=2, padding=1,
                                    output_padding=target - 2 * n_in + 1)
            if k < 4:
                stages.append(nn.Sequential(up, nn.BatchNorm3d(cout), nn.ELU()))
            else:
                stages.append(nn.Sequential(up, nn.Sigmoid()))
            cin = cout
        self.stages = nn.Sequential(*stages)

    def forward(self, z):
        h = self.fc(z).view((z.shape[0],) + self.seed_shape)
        return self.stages(h)


class DSMTAENet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        variant = cfg.variant
        chans = cfg.block_channels
        cins = (cfg.in_channels,) + chans[:-1]
        self.blocks = nn.ModuleList(ResBlock(a, b) for a, b in zip(cins, chans))
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.to_latent = nn.Linear(chans[-1], cfg.latent_dim)
        self.decoder = Decoder(cfg) if variant.has_decoder else None

        def head(kind, in_features, pool):
            return BottleneckHead(in_features, cfg.head_hidden, cfg.dropout_rate, kind, pool)

        self.age_final = head("age", cfg.latent_dim, False)
        self.sex_final = head("sex", cfg.latent_dim, False) if variant.has_sex else None
        self.age_shallow = nn.ModuleDict(
            {str(d): head("age", chans[d - 1], True) for d in cfg.depths}
        )
        self.sex_shallow = nn.ModuleDict(
            {str(d): head("sex", chans[d - 1], True) for d in cfg.depths} if variant.has_sex else {}
        )
        self.reset_parameters()

    @property
    def depths(self):
        return self.cfg.depths

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv3d, nn.ConvTranspose3d, nn.Linear)):
                nn.init.kaiming_uniform_(m.weight, a=1.0)  # fan-in scaled, unit gain
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    def age_heads(self):
        return [self.age_final] + [self.age_shallow[str(d)] for d in self.depths]

    def set_age_scaling(self, offset, scale):
        for h in self.age_heads():
            h.age_offset.fill_(float(offset))
            h.age_scale.fill_(float(scale))

    def encode(self, x):
        feats = []
        h = x
        for block in self.blocks:
            h = block(h)
            feats.append(h)
        z = self.to_latent(self.pool(h).flatten(1))
        return z, feats

    def forward(self, x) -> ModelOutputs:
        expected = (self.cfg.in_channels,) + (self.cfg.side,) * 3
        if x.ndim != 5 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"expected input (B, {', '.join(map(str, expected))}), got {tuple(x.shape)}")
        z, feats = self.encode(x)
        recon = self.decoder(z) if self.decoder is not None else None
        ages = [self.age_final(z)] + [self.age_shallow[str(d)](feats[d - 1]) for d in self.depths]
        sexes = []
        if self.sex_final is not None:
            sexes = [self.sex_final(z)] + [self.sex_shallow[str(d)](feats[d - 1]) for d in self.depths]
        return ModelOutputs(recon, ages, sexes, z, tuple(self.depths))


def build_model(cfg: ModelConfig) -> DSMTAENet:
    return DSMTAENet(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
