"""VGG-convention five-stage feature extractors and hypercolumn construction.

The extractor taps ``relu{k}_2`` for k = 1..5. Layer indices mirror
torchvision's ``vgg16``/``vgg19`` ``features`` stacks so their published
state dicts load directly. Pooling uses ``ceil_mode`` so that inputs as small
as 8x8 still reach the fifth stage.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

_CFG = {
    "vgg16": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512],
    "vgg19": [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M", 512, 512],
}
# (stage, conv-within-stage) of the taps: conv1_2 ... conv5_2
_TAPS = [(1, 2), (2, 2), (3, 2), (4, 2), (5, 2)]
WEIGHT_FILES = {"vgg16": "vgg16-397923af.pth", "vgg19": "vgg19-dcbb9e9d.pth"}

_MEAN = (0.485, 0.456, 0.406)
_STD = (0.229, 0.224, 0.225)


@dataclass
class ExtractorConfig:
    arch: str = "vgg19"
    width_divisor: int = 1
    pretrained: bool = True
    weights_dir: str | None = None
    seed: int = 0

    def weights_path(self) -> Path:
        root = self.weights_dir or os.path.join(
            os.environ.get("TORCH_HOME", os.path.expanduser("~/.cache/torch")), "hub", "checkpoints"
        )
        return Path(root) / WEIGHT_FILES[self.arch]

    def to_dict(self) -> dict:
        return asdict(self)


class VGGExtractor(nn.Module):
    """Frozen feature network returning the five ``relu{k}_2`` activations."""

    def __init__(self, arch: str = "vgg19", width_divisor: int = 1):
        super().__init__()
        if arch not in _CFG:
            raise ValueError(f"unknown extractor arch {arch!r}; choose from {sorted(_CFG)}")
        if width_divisor < 1:
            raise ValueError("width_divisor must be >= 1")
        self.arch = arch
        layers: list[nn.Module] = []
        taps: list[int] = []
        widths: list[int] = []
        in_ch, stage, conv_in_stage = 3, 1, 0
        for v in _CFG[arch]:
            if v == "M":
                layers.append(nn.MaxPool2d(2, 2, ceil_mode=True))
                stage += 1
                conv_in_stage = 0
                continue
            out_ch = max(v // width_divisor, 1)
            layers += [nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU(inplace=False)]
            conv_in_stage += 1
            if (stage, conv_in_stage) in _TAPS:
                taps.append(len(layers) - 1)
                widths.append(out_ch)
            in_ch = out_ch
        self.layers = nn.Sequential(*layers)
        self.taps = taps
        self.stage_channels = tuple(widths)
        self.register_buffer("mean", torch.tensor(_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(_STD).view(1, 3, 1, 1), persistent=False)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        x = (img - self.mean) / self.std
        feats = []
        last = self.taps[-1]
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i in self.taps:
                feats.append(x)
            if i == last:
                break
        return feats

    def load_torchvision_state(self, path) -> None:
        state = torch.load(path, map_location="cpu", weights_only=True)
        mapped = {}
        for key, value in state.items():
            if not key.startswith("features."):
                continue
            idx = int(key.split(".")[1])
            if idx < len(self.layers):
                mapped["layers." + key[len("features."):]] = value
        missing = set(self.state_dict()) - set(mapped)
        if missing:
            raise ValueError(f"weights file {path} lacks {sorted(missing)[:3]}...")
        self.load_state_dict(mapped)


def build_extractor(cfg: ExtractorConfig) -> VGGExtractor:
    """Build an extractor, loading pretrained weights or seeding a random init."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        ext = VGGExtractor(cfg.arch, cfg.width_divisor)
    if cfg.pretrained:
        if cfg.width_divisor != 1:
            raise ValueError("pretrained weights exist only for width_divisor=1")
        path = cfg.weights_path()
        if not path.is_file():
            raise FileNotFoundError(
                f"pretrained {cfg.arch} weights not found: expected {path} "
                f"(torchvision file {WEIGHT_FILES[cfg.arch]}); pass a weights dir or use a random extractor"
            )
        ext.load_torchvision_state(path)
    ext.eval()
    return ext


def hypercolumn_channels(extractor: VGGExtractor) -> int:
    return 3 + sum(extractor.stage_channels)


def extract_hypercolumn(img: torch.Tensor, extractor: VGGExtractor) -> torch.Tensor:
    """RGB input concatenated with every stage, bilinearly resampled to the input size."""
    if img.dim() != 4 or img.shape[1] != 3:
        raise ValueError(f"expected an (N, 3, H, W) tensor, got {tuple(img.shape)}")
    h, w = img.shape[-2:]
    parts = [img]
    for f in extractor(img):
        if f.shape[-2:] != (h, w):
            f = F.interpolate(f, size=(h, w), mode="bilinear", align_corners=False)
        parts.append(f)
    return torch.cat(parts, dim=1)
