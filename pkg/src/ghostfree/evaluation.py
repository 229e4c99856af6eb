"""Evaluation at original image size and batch inference."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import imaging, metrics
from .data import IMAGE_EXTS
from .dhan import DHAN

log = logging.getLogger(__name__)

REMOVAL_COLUMNS = ("id", "rmse_s", "rmse_ns", "rmse_all", "psnr_s", "ssim_s", "n_s", "n_ns")
DETECTION_COLUMNS = ("tp", "tn", "fp", "fn", "ber", "ber_s", "ber_ns")
AGGREGATIONS = ("per_image", "per_pixel")


def predict(model: DHAN, img: np.ndarray):
    """Run the model on one HWC image at its own resolution; returns ``(prediction, soft_mask)``."""
    p = next(model.parameters())
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(imaging.to_tensor(img, p.dtype))
    finally:
        model.train(was_training)
    pred = imaging.from_tensor(out.prediction) if out.prediction is not None else None
    return pred, imaging.from_tensor(out.mask)


@dataclass
class EvalResult:
    rows: list[dict]
    aggregate: dict
    columns: list[str] = field(default_factory=list)


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def evaluate(model: DHAN | None, dataset, report_path=None, rmse_mode: str = "mae",
             aggregation: str = "per_image", identity: bool = False, mask_threshold: float = 0.5) -> EvalResult:
    """Per-image metrics plus one aggregate row.

    ``identity=True`` scores the shadow input itself as the prediction (no
    model needed). Samples without a shadow-free image are run in
    inference-only mode and contribute no removal metrics.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    if model is None and not identity:
        raise ValueError("either a model or identity=True is required")
    detect_only = model is not None and not model.has_prediction_head
    rows: list[dict] = []
    pooled = None
    conf = metrics.DetectionReport(0, 0, 0, 0)
    have_conf = False
    for i in range(len(dataset)):
        t = dataset[i]
        row: dict = {"id": t.id}
        if identity:
            pred, soft = t.shadow, None
        else:
            pred, soft = predict(model, t.shadow)
        if pred is not None and t.free is not None and t.mask is not None:
            rep = metrics.removal_report(pred, t.free, t.mask, rmse_mode)
            row.update(rep.to_dict())
            sums = metrics.lab_region_sums(pred, t.free, t.mask, rmse_mode)
            pooled = sums if pooled is None else pooled + sums
        if soft is not None and t.mask is not None:
            d = metrics.ber(soft[..., 0], t.mask[..., 0], mask_threshold)
            row.update(d.to_dict())
            conf = conf + d
            have_conf = True
        rows.append(row)

    columns = list(REMOVAL_COLUMNS if not detect_only else ("id",))
    if have_conf:
        columns += list(DETECTION_COLUMNS)
    agg: dict = {"id": f"aggregate[{aggregation}]"}
    if pooled is not None:
        if aggregation == "per_pixel":
            agg.update(rmse_s=pooled.s, rmse_ns=pooled.ns, rmse_all=pooled.all)
        else:
            for k in ("rmse_s", "rmse_ns", "rmse_all"):
                agg[k] = _mean(r.get(k) for r in rows)
        for k in ("psnr_s", "ssim_s"):
            agg[k] = _mean(r.get(k) for r in rows)
        agg["n_s"] = pooled.n_s
        agg["n_ns"] = pooled.n_ns
    if have_conf:
        # detection is always pooled over pixels
        agg.update(conf.to_dict())
    if report_path is not None:
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        with open(report_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            w.writeheader()
            for r in rows + [agg]:
                w.writerow({k: _fmt(r.get(k)) for k in columns})
    return EvalResult(rows, agg, columns)


def side_by_side(*images) -> np.ndarray:
    parts = [np.repeat(x, 3, axis=2) if x.shape[2] == 1 else x for x in images]
    return np.concatenate(parts, axis=1)


def infer(model: DHAN, inputs, out_dir, grid: bool = False) -> list[Path]:
    """Write ``<stem>_pred.png`` and ``<stem>_mask.png`` (and ``<stem>_grid.png``) per input image."""
    inputs = Path(inputs)
    files = sorted(p for p in inputs.iterdir() if p.suffix.lower() in IMAGE_EXTS) if inputs.is_dir() else [inputs]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for f in files:
        try:
            img = imaging.load_png(f)
        except Exception as exc:  # noqa: BLE001 - unreadable files are reported and skipped
            log.warning("cannot read %s: %s", f, exc)
            continue
        pred, soft = predict(model, img)
        if pred is not None:
            written.append(out_dir / f"{f.stem}_pred.png")
            imaging.save_png(written[-1], pred)
        written.append(out_dir / f"{f.stem}_mask.png")
        imaging.save_png(written[-1], soft)
        if grid:
            panels = [img, soft] + ([pred] if pred is not None else [])
            written.append(out_dir / f"{f.stem}_grid.png")
            imaging.save_png(written[-1], side_by_side(*panels))
    return written
