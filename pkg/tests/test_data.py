import json
import logging

import numpy as np
import pytest
from toy import toy_triple

from ghostfree import imaging
from ghostfree.data import (
    DatasetError,
    DatasetSpec,
    derive_srd_masks,
    load_triples,
    merge_datasets,
    read_manifest,
    training_batch,
)
from ghostfree.smgan import composite


def write_dataset(root, n, split="train", h=12, w=16, seed=0, prefix_dirs=True):
    for i in range(n):
        t = toy_triple(h, w, seed + i)
        for letter, img in (("A", t.shadow), ("B", t.mask), ("C", t.free)):
            sub = f"{split}_{letter}" if prefix_dirs else letter
            imaging.save_png(root / split / sub / f"img{i:03d}.png", img)
    return root


def test_load_five_sorted(tmp_path):
    write_dataset(tmp_path, 5)
    ds = load_triples(DatasetSpec(str(tmp_path), "train"))
    assert ds.ids == [f"img{i:03d}" for i in range(5)]
    t = ds[2]
    assert t.shadow.shape == (12, 16, 3) and t.mask.shape == (12, 16, 1)
    assert set(np.unique(t.mask)) <= {0.0, 1.0}


def test_unprefixed_layout(tmp_path):
    write_dataset(tmp_path, 3, split="test", prefix_dirs=False)
    assert len(load_triples(DatasetSpec(str(tmp_path), "test"))) == 3


def test_missing_mask_skipped_with_warning(tmp_path, caplog):
    write_dataset(tmp_path, 10)
    (tmp_path / "train" / "train_B" / "img004.png").unlink()
    with caplog.at_level(logging.WARNING):
        ds = load_triples(DatasetSpec(str(tmp_path)))
    assert len(ds) == 9 and "img004" not in ds.ids
    assert sum("img004" in r.message for r in caplog.records) == 1


def test_dimension_mismatch_skipped(tmp_path):
    write_dataset(tmp_path, 10)
    imaging.save_png(tmp_path / "train" / "train_C" / "img001.png", np.zeros((12, 15, 3)))
    ds = load_triples(DatasetSpec(str(tmp_path)))
    assert "img001" not in ds.ids and len(ds) == 9


def test_too_many_broken_is_error(tmp_path):
    write_dataset(tmp_path, 5)
    (tmp_path / "train" / "train_B" / "img000.png").unlink()
    with pytest.raises(DatasetError, match="broken"):
        load_triples(DatasetSpec(str(tmp_path)))


def test_missing_root(tmp_path):
    with pytest.raises(DatasetError):
        load_triples(DatasetSpec(str(tmp_path / "nope")))


def test_derive_masks_half_plane(tmp_path):
    rng = np.random.default_rng(0)
    free = rng.uniform(0.2, 1.0, (10, 14, 3))
    half = np.zeros((10, 14, 1))
    half[:, :7] = 1
    matte = np.where(half > 0, 0.3, 1.0)
    shadow = composite(matte, free)
    imaging.save_png(tmp_path / "s" / "a.png", shadow)
    imaging.save_png(tmp_path / "f" / "a_free.png", free)
    imaging.save_png(tmp_path / "s" / "b.png", free)
    imaging.save_png(tmp_path / "f" / "b_free.png", free)
    out = derive_srd_masks(tmp_path / "s", tmp_path / "f", tmp_path / "m", free_suffix="_free")
    assert sorted(p.name for p in out.iterdir()) == ["a.png", "b.png"]
    np.testing.assert_array_equal(imaging.load_mask(out / "a.png"), half)
    assert imaging.load_mask(out / "b.png").max() == 0


def tiny_triples(n=3):
    return [toy_triple(20 + 4 * i, 30, i) for i in range(n)]


def test_training_batch_deterministic_and_in_range():
    ts = tiny_triples()
    a = training_batch(ts, seed=3, step=7, short_side_range=(16, 40))
    b = training_batch(ts, seed=3, step=7, short_side_range=(16, 40))
    assert a.id == b.id and np.array_equal(a.shadow, b.shadow)
    for step in range(30):
        t = training_batch(ts, seed=3, step=step, short_side_range=(16, 40))
        assert 16 <= min(t.shadow.shape[:2]) <= 40
        assert t.shadow.shape == t.free.shape and t.mask.shape[:2] == t.shadow.shape[:2]
        assert set(np.unique(t.mask)) <= {0.0, 1.0}


def test_training_batch_epoch_covers_each_sample_once():
    ts = tiny_triples(4)
    ids = [training_batch(ts, 0, s, (16, 20)).id for s in range(8)]
    assert sorted(ids[:4]) == sorted(t.id for t in ts) == sorted(ids[4:])


def test_training_batch_default_range():
    t = training_batch([toy_triple(20, 30, 0)], seed=0, step=0)
    assert 256 <= min(t.shadow.shape[:2]) <= 480


def test_training_batch_does_not_mutate():
    ts = tiny_triples(1)
    before = ts[0].shadow.copy()
    training_batch(ts, 0, 0, (40, 48))
    np.testing.assert_array_equal(ts[0].shadow, before)


def _manifest(tmp_path, n):
    base = tmp_path / "synth"
    lines = []
    for i in range(n):
        t = toy_triple(8, 8, 100 + i)
        paths = {}
        for key, letter, img in (("shadow", "A", t.shadow), ("mask", "B", t.mask), ("free", "C", t.free)):
            rel = f"train/train_{letter}/s{i:03d}.png"
            imaging.save_png(base / rel, img)
            paths[key] = rel
        lines.append(json.dumps({"id": f"s{i:03d}", **paths, "origin": "synth"}))
    (base / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return base / "manifest.jsonl"


def test_merge_counts_and_origins(tmp_path):
    real = load_triples(DatasetSpec(str(write_dataset(tmp_path / "real", 100, h=8, w=8))))
    man = _manifest(tmp_path, 300)
    merged = merge_datasets(real, man)
    assert len(merged) == 400
    assert merged.origins.count("real") == 100 and merged.origins.count("synth") == 300
    order = merged.epoch_order(seed=5, epoch=0)
    shuffled = [merged.refs[i] for i in order]
    assert sorted(r.origin for r in shuffled) == sorted(merged.origins)
    assert all(merged[i].origin == merged.refs[i].origin for i in (0, 150, 399))
    # no synth reproduces the real-only schedule
    assert merge_datasets(real).ids == real.ids
    np.testing.assert_array_equal(merge_datasets(real).epoch_order(5, 0), real.epoch_order(5, 0))


def test_manifest_missing_file_skipped(tmp_path, caplog):
    man = _manifest(tmp_path, 3)
    (man.parent / "train" / "train_A" / "s001.png").unlink()
    refs = read_manifest(man)
    assert [r.id for r in refs] == ["s000", "s002"]
    assert "s001" in caplog.text
