"""Supervised losses: multi-layer perceptual L1, BCE attention loss, combined objective."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .features import VGGExtractor

BCE_EPS = 1e-7


@dataclass
class LossWeights:
    lambda_perceptual: float = 20.0
    alpha_attention: float = 100.0
    adversarial: float = 1.0
    per_layer: tuple[float, ...] = field(default_factory=lambda: (1.0,) * 6)

    def __post_init__(self):
        self.per_layer = tuple(float(w) for w in self.per_layer)
        if len(self.per_layer) != 6:
            raise ValueError(f"per_layer needs 6 weights (pixels + 5 stages), got {len(self.per_layer)}")
        if min(self.lambda_perceptual, self.alpha_attention, self.adversarial, *self.per_layer) < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_layer"] = list(self.per_layer)
        return d


def perceptual_loss(pred: torch.Tensor, target: torch.Tensor, extractor: VGGExtractor,
                    weights: LossWeights | None = None) -> torch.Tensor:
    """Weighted sum of mean absolute differences over the pixels and five extractor stages."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    w = (weights or LossWeights()).per_layer
    loss = w[0] * (pred - target).abs().mean()
    if any(w[1:]):
        with torch.no_grad():
            tgt_feats = extractor(target)
        for k, (fp, ft) in enumerate(zip(extractor(pred), tgt_feats), start=1):
            if w[k]:
                loss = loss + w[k] * (fp - ft).abs().mean()
    return loss


def attention_bce(pred_mask: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    p = pred_mask.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(gt_mask * torch.log(p) + (1.0 - gt_mask) * torch.log(1.0 - p)).mean()


def generator_objective(perceptual, bce, adv_term, weights: LossWeights | None = None):
    """Return ``(total, components)`` where total = adv + lambda*perceptual + alpha*bce.

    Components may be tensors or floats; a non-finite one raises
    ``FloatingPointError`` naming it.
    """
    w = weights or LossWeights()
    parts = {"adv": adv_term, "perceptual": perceptual, "bce": bce}
    for name, value in parts.items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite {name} loss term: {v}")
    total = w.adversarial * adv_term + w.lambda_perceptual * perceptual + w.alpha_attention * bce
    components = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in parts.items()}
    components["total"] = float(total.detach()) if torch.is_tensor(total) else float(total)
    return total, components
