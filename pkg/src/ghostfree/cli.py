"""Command line interface.

Subcommands: ``train-removal``, ``train-detect``, ``train-synth``,
``synth-dataset``, ``eval``, ``infer`` and ``derive-masks``.

``--config`` takes a JSON file with optional sections, each mapping to the
fields of one dataclass::

    {"model": {...DhanConfig...}, "extractor": {...ExtractorConfig...},
     "train": {...TrainConfig...}, "loss": {...LossWeights...},
     "generator": {...GeneratorConfig...}}

Command-line flags override values from the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data, evaluation, metrics, training
from .dhan import DhanConfig
from .features import ExtractorConfig
from .losses import LossWeights
from .smgan import GeneratorConfig, augment_dataset

log = logging.getLogger("ghostfree")

VARIANT_CHOICES = ("can", "han", "dhan")
MODE_CHOICES = {"removal": "removal_joint", "detect": "detection_only"}


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"model", "extractor", "train", "loss", "generator"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _extractor_cfg(section: dict, args, arch: str) -> ExtractorConfig:
    kw = {"arch": arch, **section}
    if args.random_extractor:
        kw["pretrained"] = False
    if args.weights_dir:
        kw["weights_dir"] = args.weights_dir
    if args.extractor_width_divisor:
        kw["width_divisor"] = args.extractor_width_divisor
    return ExtractorConfig(**kw)


def _configs(args):
    raw = _load_config(args.config)
    model_kw = dict(raw.get("model", {}))
    model_kw.pop("extractor", None)
    if args.variant:
        model_kw["variant"] = args.variant
    if getattr(args, "mode", None):
        model_kw["mode"] = MODE_CHOICES[args.mode]
    if args.depth:
        model_kw["depth"] = args.depth
    if args.width:
        model_kw["base_channels"] = args.width
    ext_section = raw.get("extractor", {})
    model_cfg = DhanConfig(**model_kw, extractor=_extractor_cfg(ext_section, args, ext_section.get("arch", "vgg19")))

    train_kw = dict(raw.get("train", {}))
    if "loss" in raw:
        train_kw["weights"] = LossWeights(**raw["loss"])
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("max_steps", "max_steps"),
                      ("init_checkpoint", "init_checkpoint")):
        v = getattr(args, flag, None)
        if v is not None:
            train_kw[key] = v
    if args.short_side_range:
        train_kw["short_side_range"] = tuple(args.short_side_range)
    loss_ext = train_kw.pop("loss_extractor", {})
    if isinstance(loss_ext, ExtractorConfig):
        loss_ext = loss_ext.to_dict()
    loss_ext = {**loss_ext}
    arch = loss_ext.pop("arch", "vgg16")
    train_cfg = training.TrainConfig(**train_kw, loss_extractor=_extractor_cfg(loss_ext, args, arch))
    gen_cfg = GeneratorConfig(**raw.get("generator", {}))
    return model_cfg, train_cfg, gen_cfg


def _dataset(args, split: str):
    if not args.dataset_root:
        raise ValueError("--dataset-root is required")
    return data.load_triples(data.DatasetSpec(args.dataset_root, split, has_masks=True))


def cmd_train_removal(args) -> int:
    model_cfg, train_cfg, _ = _configs(args)
    ds = _dataset(args, "train")
    default = training.EPOCHS["removal"]
    if args.augment_manifest:
        ds = data.merge_datasets(ds, args.augment_manifest)
        default = training.EPOCHS["removal_augmented"]
    if model_cfg.mode == "detection_only":
        res = training.train_detection(train_cfg, model_cfg, ds, args.out_dir)
    else:
        res = training.train_removal(train_cfg, model_cfg, ds, args.out_dir, default_epochs=default)
    print(f"trained {len(res.history)} steps; last checkpoint {res.checkpoints[-1] if res.checkpoints else '-'}")
    return 0


def cmd_train_detect(args) -> int:
    args.mode = "detect"
    return cmd_train_removal(args)


def cmd_train_synth(args) -> int:
    _, train_cfg, gen_cfg = _configs(args)
    ds = _dataset(args, "train")
    res = training.train_smgan(train_cfg, gen_cfg, ds, args.out_dir)
    print(f"trained {len(res.history)} steps; last checkpoint {res.checkpoints[-1] if res.checkpoints else '-'}")
    return 0


def _images(d) -> list[Path]:
    return sorted(p for p in Path(d).iterdir() if p.suffix.lower() in data.IMAGE_EXTS)


def cmd_synth_dataset(args) -> int:
    if not args.checkpoint:
        raise ValueError("--checkpoint (a shadow matting checkpoint) is required")
    gen, meta = training.load_generator(args.checkpoint)
    triples = augment_dataset(_images(args.free_dir), _images(args.mask_dir), gen, k=args.k,
                              seed=args.seed or 0, out_dir=args.out_dir, generator_id=str(args.checkpoint))
    print(f"wrote {len(triples)} synthesized triples to {args.out_dir}")
    return 0


def cmd_eval(args) -> int:
    ds = data.load_triples(data.DatasetSpec(args.dataset_root, args.split, has_masks=True))
    model = None
    if not args.identity:
        if not args.checkpoint:
            raise ValueError("--checkpoint or --identity is required")
        model, _ = training.load_dhan(args.checkpoint)
    report = args.report or (Path(args.out_dir or ".") / "eval.csv")
    res = evaluation.evaluate(model, ds, report, rmse_mode=args.rmse_mode, aggregation=args.aggregate,
                              identity=args.identity)
    agg = {k: v for k, v in res.aggregate.items() if v is not None}
    print(json.dumps(agg))
    return 0


def cmd_infer(args) -> int:
    if not args.checkpoint:
        raise ValueError("--checkpoint is required")
    model, _ = training.load_dhan(args.checkpoint)
    written = evaluation.infer(model, args.input, args.out_dir or "infer_out", grid=args.grid)
    print(f"wrote {len(written)} files")
    return 0


def cmd_derive_masks(args) -> int:
    out = data.derive_srd_masks(args.shadow_dir, args.free_dir, args.out_dir, args.threshold, args.free_suffix)
    print(f"masks written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON config file (sections: model, extractor, train, loss, generator)")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--dataset-root")
    shared.add_argument("--out-dir")
    shared.add_argument("--checkpoint")
    shared.add_argument("--variant", choices=VARIANT_CHOICES)
    shared.add_argument("--mode", choices=sorted(MODE_CHOICES))
    shared.add_argument("--augment-manifest")
    shared.add_argument("--init-checkpoint")
    shared.add_argument("--epochs", type=int)
    shared.add_argument("--max-steps", type=int)
    shared.add_argument("--depth", type=int)
    shared.add_argument("--width", type=int, help="base channel count")
    shared.add_argument("--short-side-range", type=int, nargs=2, metavar=("MIN", "MAX"))
    shared.add_argument("--random-extractor", action="store_true",
                        help="use seeded random-init extractors instead of pretrained VGG weights")
    shared.add_argument("--weights-dir", help="directory holding vgg16/vgg19 torchvision weight files")
    shared.add_argument("--extractor-width-divisor", type=int)
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ghostfree", description="Shadow removal and shadow matting synthesis")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train-removal", parents=[shared], help="train DHAN for joint removal").set_defaults(
        func=cmd_train_removal)
    sub.add_parser("train-detect", parents=[shared], help="train the detection-only variant").set_defaults(
        func=cmd_train_detect)
    sub.add_parser("train-synth", parents=[shared], help="train the shadow matting GAN").set_defaults(
        func=cmd_train_synth)

    s = sub.add_parser("synth-dataset", parents=[shared], help="synthesize shadow triples")
    s.add_argument("--free-dir", required=True)
    s.add_argument("--mask-dir", required=True)
    s.add_argument("--k", type=int, default=3)
    s.set_defaults(func=cmd_synth_dataset)

    e = sub.add_parser("eval", parents=[shared], help="evaluate on a dataset split")
    e.add_argument("--split", default="test")
    e.add_argument("--report")
    e.add_argument("--identity", action="store_true", help="score the shadow input itself")
    e.add_argument("--rmse-mode", choices=metrics.ERROR_MODES, default="mae")
    e.add_argument("--aggregate", choices=evaluation.AGGREGATIONS, default="per_image")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", parents=[shared], help="remove shadows from an image or directory")
    i.add_argument("--input", required=True)
    i.add_argument("--grid", action="store_true")
    i.set_defaults(func=cmd_infer)

    d = sub.add_parser("derive-masks", parents=[shared], help="threshold mattes of shadow/free pairs into masks")
    d.add_argument("--shadow-dir", required=True)
    d.add_argument("--free-dir", required=True)
    d.add_argument("--threshold", type=float, default=0.95)
    d.add_argument("--free-suffix", default="")
    d.set_defaults(func=cmd_derive_masks)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, nonzero exit
        print(f"ghostfree {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
