"""Training loops for shadow removal, shadow detection and shadow matting synthesis.

All loops use batch size 1, fixed learning rates and a 1:1 alternation of
discriminator and generator updates. Each step appends one row to
``losses.csv``; a checkpoint is written at the end of every
``checkpoint_every`` epochs.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from . import imaging
from .adversarial import PatchDiscriminator, build_discriminator, gan_loss_terms
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .data import SHORT_SIDE_RANGE, training_batch
from .dhan import DHAN, DhanConfig, build_dhan
from .features import ExtractorConfig, build_extractor
from .losses import LossWeights, attention_bce, generator_objective, perceptual_loss
from .smgan import GeneratorConfig, MattingGenerator, build_generator, composite

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "total", "adv", "perceptual", "bce", "d_term")
EPOCHS = {"synthesis": 100, "removal": 150, "removal_augmented": 60}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_generator: float = 2e-4
    lr_discriminator: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int | None = None
    max_steps: int | None = None
    seed: int = 0
    checkpoint_every: int = 1
    short_side_range: tuple[int, int] = SHORT_SIDE_RANGE
    adversarial: bool = True
    disc_width: int = 64
    dtype: str = "float32"
    init_checkpoint: str | None = None
    loss_extractor: ExtractorConfig = field(default_factory=lambda: ExtractorConfig(arch="vgg16"))
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.short_side_range = tuple(self.short_side_range)
        if isinstance(self.loss_extractor, dict):
            self.loss_extractor = ExtractorConfig(**self.loss_extractor)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d


@dataclass
class TrainResult:
    model: torch.nn.Module
    discriminator: PatchDiscriminator | None
    history: list[dict]
    checkpoints: list[Path]


class _StepLog:
    def __init__(self, out_dir: Path | None):
        self.rows: list[dict] = []
        self._fh = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self._fh = open(out_dir / "losses.csv", "w", newline="")
            self._writer = csv.DictWriter(self._fh, fieldnames=LOG_COLUMNS)
            self._writer.writeheader()

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._writer.writerow({k: row.get(k, "") for k in LOG_COLUMNS})
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


def _adam(params, lr, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=lr, betas=cfg.betas)


def _to(arr, dtype):
    return imaging.to_tensor(arr, dtype)


def _finite(value, what: str, step: int):
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise TrainingDiverged(f"non-finite {what} at step {step}")
    return v


def _schedule(cfg: TrainConfig, n: int, default_epochs: int) -> tuple[int, int]:
    epochs = cfg.epochs if cfg.epochs is not None else default_epochs
    total = epochs * n
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps) if cfg.epochs is not None else cfg.max_steps
    return epochs, total


def dhan_meta(model: DHAN, seed: int, step: int, epoch: int, cfg: TrainConfig | None = None) -> dict:
    meta = {"kind": "dhan", "config": model.config.to_dict(), "seed": seed, "step": step, "epoch": epoch}
    if cfg is not None:
        meta["train"] = cfg.to_dict()
    return meta


def save_dhan(path, model: DHAN, disc: PatchDiscriminator | None, seed: int, step: int, epoch: int = 0,
              cfg: TrainConfig | None = None) -> Path:
    modules = {"": model}
    if disc is not None:
        modules["disc"] = disc
    meta = dhan_meta(model, seed, step, epoch, cfg)
    if disc is not None:
        meta["disc_in_channels"] = disc.in_channels
        meta["disc_width"] = disc.net[1].out_channels
    return save_checkpoint(path, modules, meta)


def load_dhan(path, with_discriminator: bool = False):
    """Rebuild a DHAN (and optionally its discriminator) from a checkpoint archive."""
    arrays, meta = read_checkpoint(path)
    if meta.get("kind") != "dhan":
        raise ValueError(f"{path} is not a DHAN checkpoint (kind={meta.get('kind')!r})")
    cfg = DhanConfig.from_dict(meta["config"])
    cfg.extractor.pretrained = False  # extractor weights live in the archive
    model = build_dhan(cfg, seed=meta.get("seed", 0))
    load_into(model, arrays)
    disc = None
    if with_discriminator and "disc_in_channels" in meta:
        disc = build_discriminator(meta["disc_in_channels"], meta["disc_width"])
        load_into(disc, arrays, "disc")
    return (model, disc, meta) if with_discriminator else (model, meta)


def save_generator(path, gen: MattingGenerator, disc: PatchDiscriminator | None, seed: int, step: int,
                   epoch: int = 0) -> Path:
    modules = {"": gen}
    meta = {"kind": "smgan", "generator": gen.config.to_dict(), "seed": seed, "step": step, "epoch": epoch}
    if disc is not None:
        modules["disc"] = disc
        meta["disc_in_channels"] = disc.in_channels
        meta["disc_width"] = disc.net[1].out_channels
    return save_checkpoint(path, modules, meta)


def load_generator(path) -> tuple[MattingGenerator, dict]:
    arrays, meta = read_checkpoint(path)
    if meta.get("kind") != "smgan":
        raise ValueError(f"{path} is not a shadow matting checkpoint (kind={meta.get('kind')!r})")
    gen = build_generator(GeneratorConfig(**meta["generator"]))
    load_into(gen, arrays)
    return gen, meta


def train_removal(cfg: TrainConfig, model_cfg: DhanConfig, dataset, out_dir=None,
                  default_epochs: int = EPOCHS["removal"]) -> TrainResult:
    """Train DHAN as a conditional GAN generator (joint removal + mask) or as a detector.

    In ``detection_only`` mode the objective reduces to the weighted attention
    BCE and no discriminator is used.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    dtype = cfg.torch_dtype
    detection = model_cfg.mode == "detection_only"
    torch.manual_seed(cfg.seed)

    if cfg.init_checkpoint:
        model, _ = load_dhan(cfg.init_checkpoint)
    else:
        model = build_dhan(model_cfg, cfg.seed)
    model.to(dtype).train()
    use_adv = cfg.adversarial and cfg.weights.adversarial > 0 and not detection
    disc = build_discriminator(6, cfg.disc_width, cfg.seed + 1).to(dtype).train() if use_adv else None
    loss_ext = None if detection else build_extractor(cfg.loss_extractor).to(dtype)
    opt_g = _adam(model.trainable_parameters(), cfg.lr_generator, cfg)
    opt_d = _adam(disc.parameters(), cfg.lr_discriminator, cfg) if disc is not None else None

    n = len(dataset)
    epochs, total_steps = _schedule(cfg, n, default_epochs)
    steplog = _StepLog(out_dir)
    ckpts: list[Path] = []
    try:
        for step in range(total_steps):
            epoch = step // n
            t = training_batch(dataset, cfg.seed, step, cfg.short_side_range)
            shadow = _to(t.shadow, dtype)
            mask = _to(t.mask, dtype) if t.mask is not None else None
            try:
                out = model(shadow)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"step {step}: {exc}") from exc
            d_val = None
            if detection:
                if mask is None:
                    raise ValueError(f"sample {t.id} has no mask; detection training needs masks")
                bce = attention_bce(out.mask, mask)
                total, comps = _objective(0.0, bce, 0.0, cfg.weights, step)
            else:
                free = _to(t.free, dtype)
                pred = out.prediction
                if disc is not None:
                    _, d_term = gan_loss_terms(disc(shadow, free), disc(shadow, pred.detach()))
                    d_val = _finite(d_term, "discriminator loss", step)
                    opt_d.zero_grad(set_to_none=True)
                    d_term.backward()
                    opt_d.step()
                    disc.requires_grad_(False)
                    g_term, _ = gan_loss_terms(None, disc(shadow, pred))
                    disc.requires_grad_(True)
                else:
                    g_term = 0.0
                perc = perceptual_loss(pred, free, loss_ext, cfg.weights)
                bce = attention_bce(out.mask, mask) if mask is not None else 0.0
                total, comps = _objective(perc, bce, g_term, cfg.weights, step)
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()
            steplog.write({"step": step, "epoch": epoch, **comps, "d_term": d_val})
            if (step + 1) % n == 0 and out_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0):
                ckpts.append(save_dhan(out_dir / f"dhan_epoch{epoch + 1:04d}.npz", model, disc, cfg.seed, step + 1,
                                       epoch + 1, cfg))
        if out_dir is not None:
            ckpts.append(save_dhan(out_dir / "dhan_final.npz", model, disc, cfg.seed, total_steps,
                                   math.ceil(total_steps / n), cfg))
    finally:
        steplog.close()
    model.eval()
    return TrainResult(model, disc, steplog.rows, ckpts)


def _objective(perc, bce, adv, weights, step):
    try:
        return generator_objective(perc, bce, adv, weights)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"step {step}: {exc}") from exc


def train_detection(cfg: TrainConfig, model_cfg: DhanConfig, dataset, out_dir=None) -> TrainResult:
    model_cfg.mode = "detection_only"
    return train_removal(cfg, model_cfg, dataset, out_dir, default_epochs=EPOCHS["removal"])


def train_smgan(cfg: TrainConfig, gen_cfg: GeneratorConfig, dataset, out_dir=None) -> TrainResult:
    """Train the matting generator on (shadow, free, mask) triples.

    The generator sees (free, mask) and predicts a matte; the composite is
    supervised with the perceptual loss against the real shadow image and an
    adversarial term from a discriminator conditioned on (free, mask).
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    dtype = cfg.torch_dtype
    torch.manual_seed(cfg.seed)
    gen = build_generator(gen_cfg, cfg.seed).to(dtype).train()
    use_adv = cfg.adversarial and cfg.weights.adversarial > 0
    disc = build_discriminator(7, cfg.disc_width, cfg.seed + 1).to(dtype).train() if use_adv else None
    loss_ext = build_extractor(cfg.loss_extractor).to(dtype)
    opt_g = _adam(gen.parameters(), cfg.lr_generator, cfg)
    opt_d = _adam(disc.parameters(), cfg.lr_discriminator, cfg) if disc is not None else None

    n = len(dataset)
    epochs, total_steps = _schedule(cfg, n, EPOCHS["synthesis"])
    steplog = _StepLog(out_dir)
    ckpts: list[Path] = []
    try:
        for step in range(total_steps):
            epoch = step // n
            t = training_batch(dataset, cfg.seed, step, cfg.short_side_range)
            if t.mask is None or t.free is None:
                raise ValueError(f"sample {t.id} lacks a mask or shadow-free image")
            shadow, free, mask = _to(t.shadow, dtype), _to(t.free, dtype), _to(t.mask, dtype)
            cond = torch.cat([free, mask], dim=1)
            synth = composite(gen(free, mask), free)
            d_val = None
            if disc is not None:
                _, d_term = gan_loss_terms(disc(cond, shadow), disc(cond, synth.detach()))
                d_val = _finite(d_term, "discriminator loss", step)
                opt_d.zero_grad(set_to_none=True)
                d_term.backward()
                opt_d.step()
                disc.requires_grad_(False)
                g_term, _ = gan_loss_terms(None, disc(cond, synth))
                disc.requires_grad_(True)
            else:
                g_term = 0.0
            perc = perceptual_loss(synth, shadow, loss_ext, cfg.weights)
            total, comps = _objective(perc, 0.0, g_term, cfg.weights, step)
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()
            steplog.write({"step": step, "epoch": epoch, **comps, "d_term": d_val})
            if (step + 1) % n == 0 and out_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0):
                ckpts.append(save_generator(out_dir / f"smgan_epoch{epoch + 1:04d}.npz", gen, disc, cfg.seed,
                                            step + 1, epoch + 1))
        if out_dir is not None:
            ckpts.append(save_generator(out_dir / "smgan_final.npz", gen, disc, cfg.seed, total_steps,
                                        math.ceil(total_steps / n)))
    finally:
        steplog.close()
    gen.eval()
    return TrainResult(gen, disc, steplog.rows, ckpts)
