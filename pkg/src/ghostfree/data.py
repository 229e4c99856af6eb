"""Dataset discovery, lazy triple loading, train-time resizing and real/synthetic merging.

A dataset root follows the ISTD release layout::

    root/
      train/train_A/*.png   shadow images
      train/train_B/*.png   binary shadow masks
      train/train_C/*.png   shadow-free images
      test/test_A ...

``root/<split>/A`` (without the split prefix) is accepted as well.
"""
from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging
from .smgan import derive_matte

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")
MAX_SKIP_FRACTION = 0.10
SHORT_SIDE_RANGE = (256, 480)


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    root: str
    split: str = "train"
    has_masks: bool = True

    def subdir(self, letter: str) -> Path:
        base = Path(self.root) / self.split
        for cand in (base / f"{self.split}_{letter}", base / letter):
            if cand.is_dir():
                return cand
        return base / f"{self.split}_{letter}"


@dataclass
class Triple:
    id: str
    shadow: np.ndarray
    free: np.ndarray | None
    mask: np.ndarray | None
    origin: str = "real"

    @property
    def size(self) -> tuple[int, int]:
        return self.shadow.shape[:2]


@dataclass(frozen=True)
class SampleRef:
    id: str
    shadow: Path
    free: Path | None
    mask: Path | None
    origin: str = "real"

    def load(self) -> Triple:
        return Triple(
            self.id,
            imaging.load_png(self.shadow),
            imaging.load_png(self.free) if self.free else None,
            imaging.load_mask(self.mask) if self.mask else None,
            self.origin,
        )


class TripleDataset(Sequence):
    """Lazily loaded triples in a fixed order; ``ds[i]`` reads files on demand."""

    def __init__(self, refs: list[SampleRef]):
        self.refs = list(refs)

    def __len__(self):
        return len(self.refs)

    def __getitem__(self, i) -> Triple:
        return self.refs[i].load()

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.refs]

    @property
    def origins(self) -> list[str]:
        return [r.origin for r in self.refs]

    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        return np.random.default_rng([seed, epoch]).permutation(len(self))


class InMemoryDataset(Sequence):
    """Triples already held in memory (tests, synthetic toy data)."""

    def __init__(self, triples: list[Triple]):
        self.triples = list(triples)

    def __len__(self):
        return len(self.triples)

    def __getitem__(self, i) -> Triple:
        return self.triples[i]

    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        return np.random.default_rng([seed, epoch]).permutation(len(self))


def _index_dir(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        return {}
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_EXTS}


def load_triples(spec: DatasetSpec, require_free: bool = True) -> TripleDataset:
    """Discover and validate samples; broken samples are skipped, too many is an error."""
    root = Path(spec.root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    shadows = _index_dir(spec.subdir("A"))
    if not shadows:
        raise DatasetError(f"no shadow images under {spec.subdir('A')}")
    frees = _index_dir(spec.subdir("C"))
    masks = _index_dir(spec.subdir("B")) if spec.has_masks else {}
    refs, skipped = [], 0
    for sid in sorted(shadows):
        free = frees.get(sid)
        mask = masks.get(sid)
        if (require_free and free is None) or (spec.has_masks and mask is None):
            log.warning("skipping %s: missing %s", sid, "shadow-free image" if free is None else "mask")
            skipped += 1
            continue
        size = imaging.image_size(shadows[sid])
        others = [p for p in (free, mask) if p is not None]
        if any(imaging.image_size(p) != size for p in others):
            log.warning("skipping %s: dimensions differ between subdirectories", sid)
            skipped += 1
            continue
        refs.append(SampleRef(sid, shadows[sid], free, mask, "real"))
    total = len(shadows)
    if skipped > MAX_SKIP_FRACTION * total:
        raise DatasetError(f"{skipped} of {total} samples in {root} are broken (limit {MAX_SKIP_FRACTION:.0%})")
    return TripleDataset(refs)


def derive_srd_masks(shadow_dir, free_dir, out_dir, threshold: float = imaging.MATTE_THRESHOLD,
                     free_suffix: str = "") -> Path:
    """Write binary masks from (shadow, shadow-free) pairs: threshold the derived matte.

    ``free_suffix`` is stripped from shadow-free stems (SRD names them ``<id>_free``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shadows = _index_dir(Path(shadow_dir))
    frees = {
        (k[: -len(free_suffix)] if free_suffix and k.endswith(free_suffix) else k): v
        for k, v in _index_dir(Path(free_dir)).items()
    }
    for sid, spath in shadows.items():
        fpath = frees.get(sid)
        if fpath is None:
            log.warning("no shadow-free counterpart for %s", sid)
            continue
        s, f = imaging.load_png(spath), imaging.load_png(fpath)
        if s.shape != f.shape:
            log.warning("skipping %s: dimensions differ", sid)
            continue
        mask = imaging.binarize_matte(derive_matte(s, f), threshold)
        imaging.save_png(out_dir / f"{sid}.png", mask)
    return out_dir


def read_manifest(path) -> list[SampleRef]:
    path = Path(path)
    base = path.parent
    refs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            paths = [base / rec[k] for k in ("shadow", "free", "mask")]
            missing = [str(p) for p in paths if not p.is_file()]
            if missing:
                log.warning("manifest line %d (%s): missing %s", lineno, rec.get("id"), missing)
                continue
            refs.append(SampleRef(rec["id"], paths[0], paths[1], paths[2], rec.get("origin", "synth")))
    return refs


def merge_datasets(real: TripleDataset, synth_manifest=None) -> TripleDataset:
    """Real samples followed by manifest samples; each keeps its origin tag."""
    refs = list(real.refs)
    if synth_manifest is not None:
        refs += read_manifest(synth_manifest)
    return TripleDataset(refs)


def resize_triple(t: Triple, short_side: int) -> Triple:
    h, w = imaging.target_size(*t.shadow.shape[:2], short_side)
    return Triple(
        t.id,
        imaging.resize_to(t.shadow, h, w),
        imaging.resize_to(t.free, h, w) if t.free is not None else None,
        imaging.resize_mask(t.mask, h, w) if t.mask is not None else None,
        t.origin,
    )


def training_batch(triples, seed: int, step: int, short_side_range=SHORT_SIDE_RANGE) -> Triple:
    """The single (batch size 1) sample for a global ``step``.

    Samples follow a per-epoch permutation so each one is seen once per
    epoch; the short side is drawn uniformly from ``short_side_range``.
    """
    n = len(triples)
    if n == 0:
        raise DatasetError("cannot draw a training sample from an empty dataset")
    epoch, pos = divmod(step, n)
    order = np.random.default_rng([seed, epoch]).permutation(n)
    lo, hi = short_side_range
    short = int(np.random.default_rng([seed, epoch, pos, 1]).integers(lo, hi + 1))
    return resize_triple(triples[int(order[pos])], short)
