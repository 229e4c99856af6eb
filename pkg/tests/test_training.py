import csv
import time
from collections.abc import Sequence

import numpy as np
import pytest
import torch
from conftest import tiny_config, tiny_extractor
from toy import toy_dataset, toy_triple

from ghostfree import evaluation
from ghostfree.checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint
from ghostfree.data import InMemoryDataset, Triple
from ghostfree.dhan import build_dhan
from ghostfree.losses import LossWeights
from ghostfree.training import TrainConfig, TrainingDiverged, load_dhan, save_dhan, train_detection, train_removal


def cfg(**kw):
    base = dict(max_steps=3, seed=0, short_side_range=(16, 20), disc_width=8,
                loss_extractor=tiny_extractor("vgg16", divisor=8))
    base.update(kw)
    return TrainConfig(**base)


def test_defaults():
    c = TrainConfig()
    assert (c.lr_generator, c.lr_discriminator, c.betas) == (2e-4, 1e-4, (0.9, 0.999))
    assert c.short_side_range == (256, 480)


def test_step_log_and_csv(tmp_path):
    res = train_removal(cfg(max_steps=4), tiny_config(), toy_dataset(2, 16, 20), tmp_path)
    assert len(res.history) == 4
    rows = list(csv.DictReader(open(tmp_path / "losses.csv")))
    assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
    assert set(rows[0]) == {"step", "epoch", "total", "adv", "perceptual", "bce", "d_term"}
    r = res.history[0]
    assert r["total"] == pytest.approx(r["adv"] + 20 * r["perceptual"] + 100 * r["bce"], rel=1e-6)


def test_equal_seeds_equal_first_losses():
    ds = toy_dataset(2, 16, 20)
    a = train_removal(cfg(max_steps=2), tiny_config(), ds).history
    b = train_removal(cfg(max_steps=2), tiny_config(), ds).history
    assert a == b
    c = train_removal(cfg(max_steps=2, seed=1), tiny_config(), ds).history
    assert c[0] != a[0]


def test_epoch_accounting_and_checkpoints(tmp_path):
    res = train_removal(cfg(max_steps=None, epochs=2), tiny_config(), toy_dataset(3, 16, 20), tmp_path)
    assert len(res.history) == 6
    assert [r["epoch"] for r in res.history] == [0, 0, 0, 1, 1, 1]
    assert [p.name for p in res.checkpoints] == ["dhan_epoch0001.npz", "dhan_epoch0002.npz", "dhan_final.npz"]


def test_perceptual_only_reduction():
    w = LossWeights(adversarial=0.0, alpha_attention=0.0)
    res = train_removal(cfg(weights=w), tiny_config(), toy_dataset(1, 16, 16))
    assert res.discriminator is None
    for r in res.history:
        assert r["adv"] == 0.0 and r["d_term"] is None
        assert r["total"] == pytest.approx(20 * r["perceptual"], rel=1e-6)


def test_checkpoint_round_trip_bitwise(tmp_path):
    res = train_removal(cfg(max_steps=3), tiny_config(depth=2, width=4), toy_dataset(2, 16, 20), tmp_path)
    path = save_dhan(tmp_path / "m.npz", res.model, res.discriminator, seed=0, step=3)
    model, disc, meta = load_dhan(path, with_discriminator=True)
    x = torch.rand(1, 3, 24, 28)
    res.model.eval()
    model.eval()
    a, b = res.model(x), model(x)
    assert torch.equal(a.prediction, b.prediction) and torch.equal(a.mask, b.mask)
    assert meta["step"] == 3 and meta["config"]["depth"] == 2
    for k, v in res.discriminator.state_dict().items():
        assert torch.equal(v, disc.state_dict()[k]), k


def test_checkpoint_format(tmp_path):
    model = build_dhan(tiny_config(), 0)
    path = save_dhan(tmp_path / "m.npz", model, None, seed=0, step=0)
    arrays, meta = read_checkpoint(path)
    assert all(a.dtype == np.dtype("<f4") for a in arrays.values())
    assert any(k.startswith("extractor.") for k in arrays)
    assert meta["kind"] == "dhan" and meta["seed"] == 0


def test_checkpoint_validation(tmp_path):
    a = torch.nn.Linear(3, 2)
    path = save_checkpoint(tmp_path / "a.npz", {"": a}, {"kind": "x"})
    arrays, _ = read_checkpoint(path)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_into(torch.nn.Linear(4, 2), arrays)
    with pytest.raises(CheckpointError, match="missing"):
        load_into(torch.nn.Sequential(torch.nn.Linear(3, 2)), arrays)
    with pytest.raises(FileNotFoundError):
        read_checkpoint(tmp_path / "none.npz")
    with pytest.raises(ValueError, match="not a DHAN"):
        load_dhan(path)


def test_init_checkpoint_fine_tune(tmp_path):
    first = train_removal(cfg(max_steps=2), tiny_config(), toy_dataset(1, 16, 16), tmp_path / "a")
    second = train_removal(cfg(max_steps=1, init_checkpoint=str(first.checkpoints[-1])), tiny_config(),
                           toy_dataset(1, 16, 16))
    fresh = train_removal(cfg(max_steps=1), tiny_config(), toy_dataset(1, 16, 16))
    assert second.history[0]["total"] != fresh.history[0]["total"]


class _PoisonAfter(Sequence):
    """Returns a NaN image once ``limit`` samples have been drawn."""

    def __init__(self, triples, limit):
        self.triples, self.limit, self.calls = triples, limit, 0

    def __len__(self):
        return len(self.triples)

    def __getitem__(self, i):
        self.calls += 1
        t = self.triples[i]
        if self.calls > self.limit:
            return Triple(t.id, np.full_like(t.shadow, np.nan), t.free, t.mask)
        return t


def test_divergence_aborts_keeping_last_checkpoint(tmp_path):
    ds = _PoisonAfter([toy_triple(16, 16, 0)], limit=2)
    with pytest.raises(TrainingDiverged, match="step 2"):
        train_removal(cfg(max_steps=None, epochs=4), tiny_config(), ds, tmp_path)
    names = sorted(p.name for p in tmp_path.glob("*.npz"))
    assert names == ["dhan_epoch0001.npz", "dhan_epoch0002.npz"]
    load_dhan(tmp_path / "dhan_epoch0002.npz")


def test_detection_single_head_and_descent():
    model_cfg = tiny_config(width=8)
    res = train_detection(cfg(max_steps=10, lr_generator=1e-4, short_side_range=(24, 24)), model_cfg,
                          toy_dataset(1, 24, 24))
    assert res.discriminator is None
    assert not res.model.has_prediction_head
    out = res.model(torch.rand(1, 3, 16, 16))
    assert out.prediction is None
    bce = [r["bce"] for r in res.history]
    assert all(b1 < b0 for b0, b1 in zip(bce, bce[1:])), bce
    assert all(r["perceptual"] == 0.0 and r["adv"] == 0.0 for r in res.history)


def test_evaluate_perfect_and_repeatable(tmp_path):
    ts = [toy_triple(16, 20, i) for i in range(3)]
    perfect = InMemoryDataset([Triple(t.id, t.free, t.free, t.mask) for t in ts])
    res = evaluation.evaluate(None, perfect, tmp_path / "p.csv", identity=True)
    for r in res.rows:
        assert (r["rmse_s"], r["rmse_ns"], r["rmse_all"], r["ssim_s"]) == (0.0, 0.0, 0.0, 1.0)
    model = build_dhan(tiny_config(), 0)
    ds = InMemoryDataset(ts)
    evaluation.evaluate(model, ds, tmp_path / "a.csv")
    evaluation.evaluate(model, ds, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 + 1 and lines[-1].startswith("aggregate[per_image]")


def test_evaluate_per_pixel_and_inference_only():
    ts = [toy_triple(16, 20, i) for i in range(2)] + [Triple("nofree", toy_triple(16, 20, 9).shadow, None, None)]
    res = evaluation.evaluate(None, InMemoryDataset(ts), aggregation="per_pixel", identity=True)
    assert "rmse_s" not in res.rows[2]
    assert res.aggregate["n_s"] == sum(r["n_s"] for r in res.rows[:2])


def test_infer_resolution_grid_and_speed(tmp_path):
    model = build_dhan(tiny_config(), 0)
    from ghostfree import imaging

    rng = np.random.default_rng(0)
    imaging.save_png(tmp_path / "in" / "big.png", rng.random((480, 640, 3)))
    imaging.save_png(tmp_path / "in" / "small.png", rng.random((20, 24, 3)))
    (tmp_path / "in" / "broken.png").write_bytes(b"xx")
    t0 = time.perf_counter()
    written = evaluation.infer(model, tmp_path / "in", tmp_path / "out", grid=True)
    elapsed = time.perf_counter() - t0
    assert len(written) == 6
    assert imaging.load_png(tmp_path / "out" / "big_pred.png").shape == (480, 640, 3)
    assert imaging.load_png(tmp_path / "out" / "big_mask.png").shape == (480, 640, 3)
    assert imaging.load_png(tmp_path / "out" / "big_grid.png").shape == (480, 3 * 640, 3)
    assert elapsed < 10.0


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="width 8 plateaus near 57% of the step-0 shadow error in 300 steps; "
                                       "width 32 meets the 30% bar (see acceptance 6a)")
def test_width8_overfit_two_triples():
    ds = toy_dataset(2, 32, 40)
    mc = tiny_config(depth=2, width=8, extractor=tiny_extractor(divisor=4))
    r0 = evaluation.evaluate(build_dhan(mc, 0), ds).aggregate["rmse_s"]
    res = train_removal(cfg(max_steps=300, short_side_range=(28, 36), disc_width=16,
                            loss_extractor=tiny_extractor("vgg16", divisor=4)), mc, ds)
    assert evaluation.evaluate(res.model, ds).aggregate["rmse_s"] < 0.3 * r0
