"""Evaluation metrics: region-wise LAB error, shadow-region PSNR/SSIM and balanced error rate."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .imaging import srgb_to_lab

PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
ERROR_MODES = ("mae", "mae_mean", "rms")


def _check_pair(pred, gt, mask=None):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    if mask is None:
        return p, g, None
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[..., 0]
    if m.shape != p.shape[:2]:
        raise ValueError(f"mask {m.shape} does not match image {p.shape[:2]}")
    return p, g, m >= 0.5


@dataclass
class RegionSums:
    """Per-image sums of per-pixel LAB error, kept so datasets can be pooled per pixel."""

    sum_s: float
    n_s: int
    sum_ns: float
    n_ns: int
    mode: str = "mae"

    def _finish(self, total, n):
        if n == 0:
            return None
        v = total / n
        return math.sqrt(v) if self.mode == "rms" else v

    @property
    def s(self):
        return self._finish(self.sum_s, self.n_s)

    @property
    def ns(self):
        return self._finish(self.sum_ns, self.n_ns)

    @property
    def all(self):
        return self._finish(self.sum_s + self.sum_ns, self.n_s + self.n_ns)

    def __add__(self, other: "RegionSums") -> "RegionSums":
        if self.mode != other.mode:
            raise ValueError("cannot pool sums computed in different modes")
        return RegionSums(self.sum_s + other.sum_s, self.n_s + other.n_s,
                          self.sum_ns + other.sum_ns, self.n_ns + other.n_ns, self.mode)


def lab_region_sums(pred, gt, mask, mode: str = "mae") -> RegionSums:
    if mode not in ERROR_MODES:
        raise ValueError(f"mode must be one of {ERROR_MODES}")
    p, g, m = _check_pair(pred, gt, mask)
    diff = srgb_to_lab(p) - srgb_to_lab(g)
    if mode == "mae":
        per_px = np.abs(diff).sum(axis=2)
    elif mode == "mae_mean":
        per_px = np.abs(diff).mean(axis=2)
    else:
        per_px = (diff**2).sum(axis=2)
    n_s = int(m.sum())
    return RegionSums(float(per_px[m].sum()), n_s, float(per_px[~m].sum()), int(m.size - n_s), mode)


def lab_region_error(pred, gt, mask, mode: str = "mae"):
    """``(shadow, non-shadow, all)`` LAB error; an empty region yields ``None``.

    ``mode="mae"`` takes |dL| + |da| + |db| per pixel and averages over the
    region (the convention behind the usual shadow-removal "RMSE" figures);
    ``mode="mae_mean"`` divides that per-pixel value by 3; ``mode="rms"`` is
    the root mean square of the per-pixel Euclidean LAB distance.
    """
    r = lab_region_sums(pred, gt, mask, mode)
    return r.s, r.ns, r.all


def psnr_region(pred, gt, mask, cap: float = PSNR_CAP) -> float:
    p, g, m = _check_pair(pred, gt, mask)
    if not m.any():
        raise ValueError("PSNR region is empty")
    mse = float(((p - g) ** 2)[m].mean())
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def psnr(pred, gt, cap: float = PSNR_CAP) -> float:
    p = np.asarray(pred)
    return psnr_region(p, gt, np.ones(p.shape[:2]), cap)


def ssim_map(pred, gt, window_size: int = 11, sigma: float = 1.5, data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM averaged over channels; Gaussian window, half-sample symmetric borders."""
    p, g, _ = _check_pair(pred, gt)
    if p.ndim == 2:
        p, g = p[..., None], g[..., None]
    win = kernels.gaussian_window(window_size, sigma)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    out = np.zeros(p.shape[:2])
    for c in range(p.shape[2]):
        x, y = p[..., c], g[..., c]
        mx = kernels.gaussian_filter(x, win)
        my = kernels.gaussian_filter(y, win)
        sxx = kernels.gaussian_filter(x * x, win) - mx * mx
        syy = kernels.gaussian_filter(y * y, win) - my * my
        sxy = kernels.gaussian_filter(x * y, win) - mx * my
        out += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return out / p.shape[2]


def ssim_region(pred, gt, mask, **kw) -> float:
    p, g, m = _check_pair(pred, gt, mask)
    if not m.any():
        raise ValueError("SSIM region is empty")
    return float(ssim_map(p, g, **kw)[m].mean())


@dataclass
class RemovalReport:
    rmse_s: float | None
    rmse_ns: float | None
    rmse_all: float | None
    psnr_s: float | None
    ssim_s: float | None
    n_s: int
    n_ns: int

    def to_dict(self) -> dict:
        return asdict(self)


def removal_report(pred, gt, mask, mode: str = "mae") -> RemovalReport:
    sums = lab_region_sums(pred, gt, mask, mode)
    has_s = sums.n_s > 0
    return RemovalReport(
        sums.s, sums.ns, sums.all,
        psnr_region(pred, gt, mask) if has_s else None,
        ssim_region(pred, gt, mask) if has_s else None,
        sums.n_s, sums.n_ns,
    )


@dataclass
class DetectionReport:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def ber_s(self) -> float | None:
        pos = self.tp + self.fn
        return None if pos == 0 else 100.0 * self.fn / pos

    @property
    def ber_ns(self) -> float | None:
        neg = self.tn + self.fp
        return None if neg == 0 else 100.0 * self.fp / neg

    @property
    def ber(self) -> float | None:
        s, ns = self.ber_s, self.ber_ns
        if s is None or ns is None:
            return None
        return 0.5 * (s + ns)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "DetectionReport") -> "DetectionReport":
        return DetectionReport(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {**asdict(self), "ber": self.ber, "ber_s": self.ber_s, "ber_ns": self.ber_ns}


def ber(pred_mask, gt_mask, threshold: float = 0.5) -> DetectionReport:
    """Confusion counts with shadow as the positive class; BER reported in percent."""
    p = np.asarray(pred_mask)
    g = np.asarray(gt_mask)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return DetectionReport(*kernels.confusion_counts(p >= threshold, g >= 0.5))
