"""Conditional patch discriminator and GAN loss terms.

Four stride-2 stages (kernel 4) halve the resolution with ``ceil``
semantics: each pads one pixel before and two after, so an ``H`` input maps
to ``ceil(H/2)`` and even 1x1 maps survive. A final stride-1 3x3 conv gives
one logit per patch, so a 64x64 input yields a 4x4 map.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

TOTAL_STRIDE = 16


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int, base_width: int = 64, max_width: int = 512):
        super().__init__()
        widths = [min(base_width * 2**i, max_width) for i in range(4)]
        layers: list[nn.Module] = []
        prev = in_channels
        for i, w in enumerate(widths):
            layers.append(nn.ZeroPad2d((1, 2, 1, 2)))
            layers.append(nn.Conv2d(prev, w, 4, stride=2))
            if i > 0:
                layers.append(nn.BatchNorm2d(w))
            layers.append(nn.ReLU())
            prev = w
        layers.append(nn.Conv2d(prev, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)
        self.in_channels = in_channels

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        if condition.shape[0] != candidate.shape[0] or condition.shape[-2:] != candidate.shape[-2:]:
            raise ValueError(
                f"condition {tuple(condition.shape)} and candidate {tuple(candidate.shape)} differ in size"
            )
        return self.net(torch.cat([condition, candidate], dim=1))


def build_discriminator(in_channels: int, base_width: int = 64, seed: int = 0) -> PatchDiscriminator:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return PatchDiscriminator(in_channels, base_width)


def discriminate(d: PatchDiscriminator, condition, candidate) -> torch.Tensor:
    return d(condition, candidate)


def gan_loss_terms(real_logits: torch.Tensor | None, fake_logits: torch.Tensor):
    """Cross-entropy GAN terms on patch logits.

    ``d_term`` sums the real->1 and fake->0 patch means; ``g_term`` pushes
    fake->1. ``real_logits`` may be None when only ``g_term`` is needed.
    """
    g_term = F.softplus(-fake_logits).mean()
    if real_logits is None:
        return g_term, None
    d_term = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    return g_term, d_term
