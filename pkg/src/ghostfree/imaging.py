"""Image containers, colour conversion, resizing and matte/mask primitives.

Images are ``float32`` arrays of shape ``(H, W, C)`` with values in ``[0, 1]``.
Masks and mattes use the same layout with ``C == 1`` (mattes may carry 3
channels). Everything here is a pure function of its inputs.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from . import kernels

MATTE_THRESHOLD = 0.95
MIN_SIDE = 8


class ContractError(ValueError):
    """An input violates a documented shape or range contract."""


def as_image(arr, channels: int | None = None) -> np.ndarray:
    """Coerce ``arr`` to a float32 ``(H, W, C)`` array, adding a channel axis to 2-D input."""
    x = np.asarray(arr, dtype=np.float32)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ContractError(f"expected an (H, W, C) array, got shape {x.shape}")
    if channels is not None and x.shape[2] != channels:
        raise ContractError(f"expected {channels} channels, got {x.shape[2]}")
    return x


def load_png(path, mode: str = "RGB") -> np.ndarray:
    """8-bit image file as float32 in [0, 1] (value / 255)."""
    with PILImage.open(path) as im:
        data = np.asarray(im.convert(mode), dtype=np.float32) / 255.0
    return as_image(data)


def load_mask(path) -> np.ndarray:
    """Load a mask PNG (any mode) as a binary ``(H, W, 1)`` array."""
    with PILImage.open(path) as im:
        gray = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return (gray >= 0.5).astype(np.float32)[:, :, None]


def to_uint8(img) -> np.ndarray:
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def save_png(path, img) -> None:
    x = to_uint8(as_image(img))
    if x.shape[2] == 1:
        x = x[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(x).save(path)


def image_size(path) -> tuple[int, int]:
    """(height, width) read from the file header only."""
    with PILImage.open(path) as im:
        w, h = im.size
    return h, w


def srgb_to_lab(img) -> np.ndarray:
    """CIE L*a*b* (D65) of an sRGB image, returned as float64."""
    x = np.asarray(img)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ContractError(f"srgb_to_lab needs a 3-channel image, got shape {x.shape}")
    return kernels.srgb_to_lab(x)


def target_size(height: int, width: int, short_side: int) -> tuple[int, int]:
    """Output dims with the short side set and the long side rounded half-up."""
    if short_side < MIN_SIDE:
        raise ContractError(f"short_side must be >= {MIN_SIDE}, got {short_side}")
    short, long_ = (height, width) if height <= width else (width, height)
    new_long = int(np.floor(long_ * short_side / short + 0.5))
    return (short_side, new_long) if height <= width else (new_long, short_side)


def resize_to(img, height: int, width: int) -> np.ndarray:
    x = as_image(img)
    if x.shape[:2] == (height, width):
        return x.copy()
    out = kernels.resize_bilinear(x, height, width)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_nearest(img, height: int, width: int) -> np.ndarray:
    x = as_image(img)
    rows = np.minimum((np.arange(height) + 0.5) * x.shape[0] / height, x.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(width) + 0.5) * x.shape[1] / width, x.shape[1] - 1).astype(int)
    return x[rows][:, cols].copy()


def resize_preserve_aspect(img, short_side: int) -> np.ndarray:
    """Bilinear resize so that ``min(H, W) == short_side``, keeping the aspect ratio."""
    x = as_image(img)
    h, w = target_size(x.shape[0], x.shape[1], short_side)
    return resize_to(x, h, w)


def resize_mask(mask, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize followed by re-binarisation at 0.5."""
    return (resize_nearest(mask, height, width) >= 0.5).astype(np.float32)


def binarize_matte(matte, threshold: float = MATTE_THRESHOLD) -> np.ndarray:
    """Shadow mask from a matte: 1 where the channel-mean matte is below ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")
    m = as_image(matte)
    return (m.mean(axis=2, keepdims=True) < threshold).astype(np.float32)


# numpy HWC <-> torch NCHW

def to_tensor(img, dtype=torch.float32) -> torch.Tensor:
    x = as_image(img)
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def from_tensor(t: torch.Tensor) -> np.ndarray:
    x = t.detach().cpu()
    if x.dim() == 4:
        x = x[0]
    return x.permute(1, 2, 0).numpy().astype(np.float32)
