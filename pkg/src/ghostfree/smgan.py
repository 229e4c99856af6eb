"""Shadow matting GAN: matte generator, multiplicative compositing and dataset augmentation."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import imaging

log = logging.getLogger(__name__)

MATTE_FLOOR = 1e-3


@dataclass
class GeneratorConfig:
    ngf: int = 64
    n_down: int = 2
    n_blocks: int = 9
    matte_channels: int = 3

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch, affine=True), nn.ReLU(),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class MattingGenerator(nn.Module):
    """ResNet encoder-decoder mapping (shadow-free RGB, mask) to a sigmoid matte."""

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        cfg = cfg or GeneratorConfig()
        self.config = cfg
        ngf = cfg.ngf
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3), nn.Conv2d(4, ngf, 7), nn.InstanceNorm2d(ngf, affine=True), nn.ReLU(),
        ]
        ch = ngf
        for _ in range(cfg.n_down):
            layers += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1), nn.InstanceNorm2d(ch * 2, affine=True), nn.ReLU()]
            ch *= 2
        layers += [ResidualBlock(ch) for _ in range(cfg.n_blocks)]
        for _ in range(cfg.n_down):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(ch // 2, affine=True), nn.ReLU(),
            ]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, cfg.matte_channels, 7)]
        self.net = nn.Sequential(*layers)

    @property
    def output_conv(self) -> nn.Conv2d:
        return self.net[-1]

    def forward(self, free: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h, w = free.shape[-2:]
        m = 2**self.config.n_down
        ph, pw = (-h) % m, (-w) % m
        x = torch.cat([free, mask], dim=1)
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect" if min(h, w) > max(ph, pw) else "replicate")
        out = torch.sigmoid(self.net(x))
        return out[..., :h, :w]


def build_generator(cfg: GeneratorConfig | None = None, seed: int = 0) -> MattingGenerator:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return MattingGenerator(cfg)


def composite(matte, free):
    """Multiplicative shadow compositing, clamped to [0, 1]. Works on arrays and tensors."""
    if torch.is_tensor(matte) or torch.is_tensor(free):
        if matte.shape[-2:] != free.shape[-2:]:
            raise ValueError(f"matte {tuple(matte.shape)} and image {tuple(free.shape)} differ in size")
        return (matte * free).clamp(0.0, 1.0)
    m, f = np.asarray(matte), np.asarray(free)
    if m.shape[:2] != f.shape[:2] or m.shape[2] not in (1, f.shape[2]):
        raise ValueError(f"matte {m.shape} is not broadcastable to image {f.shape}")
    return np.clip(m * f, 0.0, 1.0).astype(np.result_type(m.dtype, f.dtype))


def derive_matte(shadow, free, floor: float = MATTE_FLOOR) -> np.ndarray:
    """Matte that maps ``free`` onto ``shadow``: clamp(shadow / max(free, floor), 0, 1)."""
    s = np.asarray(shadow, dtype=np.float64)
    f = np.asarray(free, dtype=np.float64)
    if s.shape != f.shape:
        raise ValueError(f"shadow {s.shape} and free {f.shape} differ in shape")
    return np.clip(s / np.maximum(f, floor), 0.0, 1.0)


def synthesize_shadow(gen: MattingGenerator, free, mask):
    """Run the generator on numpy inputs; returns ``(shadow_synth, matte)`` as float32 arrays."""
    free = imaging.as_image(free, 3)
    mask = imaging.as_image(mask, 1)
    if free.shape[:2] != mask.shape[:2]:
        raise ValueError(f"free image {free.shape} and mask {mask.shape} differ in size")
    p = next(gen.parameters())
    with torch.no_grad():
        ft = imaging.to_tensor(free, p.dtype)
        mt = imaging.to_tensor(mask, p.dtype)
        matte = gen(ft, mt)
        shadow = composite(matte, ft)
    return imaging.from_tensor(shadow), imaging.from_tensor(matte)


@dataclass
class SynthTriple:
    free: np.ndarray
    mask: np.ndarray
    shadow_synth: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.provenance["id"]


def _pool_item(item, idx: int, loader):
    """Pool entries are paths or ``(id, array)`` pairs."""
    if isinstance(item, (str, Path)):
        return Path(item).stem, lambda: loader(item)
    if isinstance(item, tuple) and len(item) == 2:
        return str(item[0]), lambda: item[1]
    return f"item{idx:05d}", lambda: item


def mask_assignment(n_free: int, n_masks: int, k: int, seed: int) -> list[list[int]]:
    """k mask indices per free image, without replacement unless the pool is smaller than k."""
    rng = np.random.default_rng(seed)
    replace = n_masks < k
    return [rng.choice(n_masks, size=k, replace=replace).tolist() for _ in range(n_free)]


def augment_dataset(free_pool, mask_pool, gen: MattingGenerator, k: int = 3, seed: int = 0,
                    out_dir=None, generator_id: str = "") -> list[SynthTriple]:
    """Synthesise ``k`` shadow images per shadow-free image from randomly drawn masks.

    With ``out_dir`` set, triples are written as ``train/train_{A,B,C}`` PNGs
    plus ``manifest.jsonl``. Unreadable inputs are skipped with a warning.
    """
    if not free_pool or not mask_pool:
        raise ValueError("free_pool and mask_pool must be non-empty")
    frees = [_pool_item(x, i, imaging.load_png) for i, x in enumerate(free_pool)]
    masks = [_pool_item(x, i, imaging.load_mask) for i, x in enumerate(mask_pool)]
    plan = mask_assignment(len(frees), len(masks), k, seed)

    if out_dir is not None:
        out_dir = Path(out_dir)
        dirs = {c: out_dir / "train" / f"train_{c}" for c in "ABC"}
        for d in dirs.values():
            d.mkdir(parents=True, exist_ok=True)
        manifest = open(out_dir / "manifest.jsonl", "w")
    triples: list[SynthTriple] = []
    try:
        for (free_id, load_free), chosen in zip(frees, plan):
            try:
                free = imaging.as_image(load_free(), 3)
            except Exception as exc:  # noqa: BLE001 - any unreadable input is skipped
                log.warning("skipping free image %s: %s", free_id, exc)
                continue
            for j, mi in enumerate(chosen):
                mask_id, load_mask = masks[mi]
                try:
                    mask = imaging.as_image(load_mask(), 1)
                except Exception as exc:  # noqa: BLE001
                    log.warning("skipping mask %s for %s: %s", mask_id, free_id, exc)
                    continue
                mask = imaging.resize_mask(mask, *free.shape[:2])
                shadow, _ = synthesize_shadow(gen, free, mask)
                tid = f"{free_id}__{mask_id}__{j}"
                prov = {"id": tid, "free": free_id, "mask": mask_id, "generator": generator_id, "seed": seed}
                triples.append(SynthTriple(free, mask, shadow, prov))
                if out_dir is not None:
                    name = tid + ".png"
                    imaging.save_png(dirs["A"] / name, shadow)
                    imaging.save_png(dirs["B"] / name, mask)
                    imaging.save_png(dirs["C"] / name, free)
                    rec = {
                        "id": tid,
                        "shadow": f"train/train_A/{name}",
                        "mask": f"train/train_B/{name}",
                        "free": f"train/train_C/{name}",
                        "origin": "synth",
                        "provenance": prov,
                    }
                    manifest.write(json.dumps(rec) + "\n")
    finally:
        if out_dir is not None:
            manifest.close()
    return triples
