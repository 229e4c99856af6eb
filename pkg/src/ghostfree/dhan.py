"""Dual Hierarchical Aggregation Network.

Level ``n`` (1-based) runs two dilated blocks with rates ``2**(n-1)`` and
``2**n`` on the gated output of the previous level. A feature aggregation node
merges every earlier feature-tree output with the two new blocks; an attention
aggregation node does the same over the earlier attention maps and ends in a
sigmoid. The next level consumes ``features * attention``. Nothing on the main
path changes resolution.

Variants: ``can`` is the plain dilated chain, ``han`` adds the feature tree,
``dhan`` adds the attention tree on top.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import ExtractorConfig, VGGExtractor, build_extractor, extract_hypercolumn, hypercolumn_channels

log = logging.getLogger(__name__)

VARIANTS = ("can", "han", "dhan")
MODES = ("removal_joint", "detection_only")


@dataclass
class DhanConfig:
    depth: int = 6
    base_channels: int = 64
    variant: str = "dhan"
    leaky_slope: float = 0.2
    spp_scales: tuple[int, ...] = (2, 4, 8, 16)
    matte_channels: int = 3
    mode: str = "removal_joint"
    se_reduction: int = 16
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)

    def __post_init__(self):
        self.variant = self.variant.lower()
        self.spp_scales = tuple(int(s) for s in self.spp_scales)
        if isinstance(self.extractor, dict):
            self.extractor = ExtractorConfig(**self.extractor)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.depth > 12:
            raise ValueError(f"depth {self.depth} implies dilation {2 ** self.depth}; refusing")
        if self.base_channels < 1 or self.matte_channels < 1:
            raise ValueError("channel counts must be positive")
        if any(s < 1 for s in self.spp_scales):
            raise ValueError("spatial pyramid scales must be positive")
        if self.leaky_slope < 0:
            raise ValueError("leaky_slope must be non-negative")

    @property
    def max_dilation(self) -> int:
        return 2**self.depth

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spp_scales"] = list(self.spp_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DhanConfig":
        return cls(**d)


class DilatedBlock(nn.Module):
    """Dilated conv (size-preserving zero padding) -> InstanceNorm -> LeakyReLU.

    The conv has no bias: the norm subtracts the per-channel mean, so a bias
    would be a parameter the output cannot depend on.
    """

    def __init__(self, in_ch: int, out_ch: int, dilation: int = 1, slope: float = 0.2, kernel_size: int = 3):
        super().__init__()
        pad = dilation * (kernel_size // 2)
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, padding=pad, dilation=dilation, bias=False)
        self.norm = nn.InstanceNorm2d(out_ch, affine=True)
        self.act = nn.LeakyReLU(slope)
        self.dilation = dilation

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


def dilated_block(x: torch.Tensor, block: DilatedBlock) -> torch.Tensor:
    return block(x)


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def gate(self, x):
        s = F.adaptive_avg_pool2d(x, 1)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(s))))

    def forward(self, x, gate_override: float | None = None):
        if gate_override is not None:
            return x * gate_override
        return x * self.gate(x)


class AggregationNode(nn.Module):
    """Concatenate inputs, reweight channels with squeeze-and-excitation, squeeze with a 3x3 conv.

    Feature nodes end in LeakyReLU. Attention nodes end in a sigmoid when
    ``terminal``; ``forward_logits`` exposes the pre-sigmoid map.
    """

    def __init__(self, n_inputs: int, channels: int, reduction: int = 16, attention: bool = False, slope: float = 0.2):
        super().__init__()
        self.n_inputs = n_inputs
        self.attention = attention
        self.se = SqueezeExcite(n_inputs * channels, reduction)
        self.conv = nn.Conv2d(n_inputs * channels, channels, 3, padding=1)
        self.slope = slope

    def project(self, features, gate_override=None):
        if len(features) < 2:
            raise ValueError("an aggregation node needs at least two inputs")
        size = features[0].shape[-2:]
        for f in features[1:]:
            if f.shape[-2:] != size:
                raise ValueError(f"aggregation inputs disagree on spatial size: {tuple(size)} vs {tuple(f.shape[-2:])}")
        x = torch.cat(features, dim=1)
        return self.conv(self.se(x, gate_override))

    def forward(self, features, terminal: bool = True, gate_override=None):
        y = self.project(features, gate_override)
        if self.attention:
            return torch.sigmoid(y) if terminal else y
        return F.leaky_relu(y, self.slope)


def aggregation_node(features, node: AggregationNode, gate_override=None) -> torch.Tensor:
    return node(features, gate_override=gate_override)


def attention_aggregation_node(features, node: AggregationNode, terminal: bool = True) -> torch.Tensor:
    return node(features, terminal=terminal)


class SpatialPoolingPyramid(nn.Module):
    """Average-pool at each scale, upsample back, concatenate with the input and fuse with a 1x1 conv."""

    def __init__(self, channels: int, scales=(2, 4, 8, 16), slope: float = 0.2):
        super().__init__()
        self.scales = tuple(scales)
        self.channels = channels
        self.fuse = nn.Conv2d(channels * (1 + len(self.scales)), channels, 1)
        self.slope = slope
        self._warned: set = set()

    def branches(self, x) -> tuple[list[torch.Tensor], list[int]]:
        h, w = x.shape[-2:]
        outs, kept = [x], [0]
        for i, s in enumerate(self.scales, start=1):
            if min(h, w) < s:
                if (s, h, w) not in self._warned:
                    self._warned.add((s, h, w))
                    log.warning("spatial pyramid: skipping scale %d for %dx%d input", s, h, w)
                continue
            pooled = F.avg_pool2d(x, s, s, ceil_mode=True)
            outs.append(F.interpolate(pooled, size=(h, w), mode="bilinear", align_corners=False))
            kept.append(i)
        return outs, kept

    def forward(self, x):
        outs, kept = self.branches(x)
        c = self.channels
        if len(kept) == 1 + len(self.scales):
            y = self.fuse(torch.cat(outs, dim=1))
        else:
            idx = torch.cat([torch.arange(k * c, (k + 1) * c) for k in kept]).to(x.device)
            y = F.conv2d(torch.cat(outs, dim=1), self.fuse.weight[:, idx], self.fuse.bias)
        return F.leaky_relu(y, self.slope)


def spatial_pooling_pyramid(x, spp: SpatialPoolingPyramid) -> torch.Tensor:
    return spp(x)


class DhanOutput(NamedTuple):
    prediction: torch.Tensor | None
    mask: torch.Tensor
    attentions: list


class Level(nn.Module):
    def __init__(self, n: int, cfg: DhanConfig):
        super().__init__()
        c, slope = cfg.base_channels, cfg.leaky_slope
        self.block1 = DilatedBlock(c, c, 2 ** (n - 1), slope)
        self.block2 = DilatedBlock(c, c, 2**n, slope)
        # inputs: n-1 earlier tree outputs + the two blocks of this level
        if cfg.variant in ("han", "dhan"):
            self.node = AggregationNode(n + 1, c, cfg.se_reduction, attention=False, slope=slope)
        if cfg.variant == "dhan":
            self.attn_node = AggregationNode(n + 1, c, cfg.se_reduction, attention=True, slope=slope)


class DHAN(nn.Module):
    def __init__(self, cfg: DhanConfig, extractor: VGGExtractor):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.extractor = extractor
        c = cfg.base_channels
        self.stem = DilatedBlock(hypercolumn_channels(extractor), c, 1, cfg.leaky_slope, kernel_size=1)
        self.levels = nn.ModuleList(Level(n, cfg) for n in range(1, cfg.depth + 1))
        self.spp = SpatialPoolingPyramid(c, cfg.spp_scales, cfg.leaky_slope)
        if cfg.mode == "removal_joint":
            self.head = nn.Conv2d(c, cfg.matte_channels, 1)
        self.mask_head = nn.Conv2d(c, 1, 1)

    @property
    def has_prediction_head(self) -> bool:
        return self.config.mode == "removal_joint"

    def trainable_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("extractor.")]

    def forward(self, img: torch.Tensor, attention_override: float | None = None) -> DhanOutput:
        variant = self.config.variant
        with torch.no_grad():
            hyper = extract_hypercolumn(img, self.extractor)
        g = self.stem(hyper)
        trees, attns, attn_logits = [], [], None
        for n, level in enumerate(self.levels, start=1):
            l1 = level.block1(g)
            l2 = level.block2(l1)
            if variant == "can":
                g = l2
            else:
                t = level.node([*reversed(trees), l1, l2])
                if variant == "dhan":
                    attn_logits = level.attn_node.project([*reversed(attns), l1, l2])
                    a = torch.sigmoid(attn_logits)
                    if attention_override is not None:
                        a = torch.full_like(a, attention_override)
                    attns.append(a)
                    g = t * a
                else:
                    g = t
                trees.append(t)
            if not torch.isfinite(g).all():
                raise FloatingPointError(f"non-finite activation at level {n} ({variant})")
        s = self.spp(g)
        pred = None
        if self.has_prediction_head:
            pred = self.head(s)
            if not self.training:
                pred = pred.clamp(0.0, 1.0)
        mask_src = attn_logits if variant == "dhan" else s
        mask = torch.sigmoid(self.mask_head(mask_src))
        return DhanOutput(pred, mask, attns)


def dhan_forward(model: DHAN, img: torch.Tensor, attention_override: float | None = None) -> DhanOutput:
    return model(img, attention_override=attention_override)


def build_dhan(config: DhanConfig, seed: int = 0, extractor: VGGExtractor | None = None) -> DHAN:
    """Deterministically initialise a DHAN (or CAN/HAN) for ``seed``."""
    config.validate()
    if extractor is None:
        extractor = build_extractor(config.extractor)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DHAN(config, extractor)
    return model


def count_parameters(model: nn.Module, prefix: str | None = None) -> int:
    params = model.trainable_parameters() if hasattr(model, "trainable_parameters") else model.parameters()
    if prefix is None:
        return sum(p.numel() for p in params)
    return sum(p.numel() for n, p in model.named_parameters() if prefix in n)
