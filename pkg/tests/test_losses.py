import math

import pytest
import torch
from conftest import tiny_extractor

from ghostfree.features import build_extractor
from ghostfree.losses import LossWeights, attention_bce, generator_objective, perceptual_loss


@pytest.fixture(scope="module")
def ext():
    return build_extractor(tiny_extractor("vgg16", divisor=8))


def test_weight_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda_perceptual, w.alpha_attention, w.per_layer) == (20.0, 100.0, (1.0,) * 6)
    with pytest.raises(ValueError):
        LossWeights(per_layer=(1.0,) * 5)
    with pytest.raises(ValueError):
        LossWeights(alpha_attention=-1)


def test_perceptual_identical_is_zero(ext):
    a = torch.rand(1, 3, 24, 24)
    assert perceptual_loss(a, a.clone(), ext).item() == 0.0


def test_perceptual_pixel_term_constant_images(ext):
    w = LossWeights(per_layer=(1, 0, 0, 0, 0, 0))
    loss = perceptual_loss(torch.zeros(1, 3, 16, 16), torch.ones(1, 3, 16, 16), ext, w)
    assert loss.item() == pytest.approx(1.0, abs=1e-7)


def test_perceptual_symmetric_and_deterministic(ext):
    g = torch.Generator().manual_seed(0)
    a, b = torch.rand(1, 3, 20, 28, generator=g), torch.rand(1, 3, 20, 28, generator=g)
    ab, ba = perceptual_loss(a, b, ext), perceptual_loss(b, a, ext)
    assert ab.item() > 0
    assert ab.item() == pytest.approx(ba.item(), rel=1e-6)
    assert perceptual_loss(a, b, ext).item() == ab.item()


def test_perceptual_shape_mismatch(ext):
    with pytest.raises(ValueError):
        perceptual_loss(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 9), ext)


def test_bce_uniform_half_is_ln2():
    m = (torch.rand(1, 1, 7, 9) > 0.5).float()
    assert attention_bce(torch.full_like(m, 0.5), m).item() == pytest.approx(math.log(2), abs=1e-6)


def test_bce_perfect_prediction_small():
    m = (torch.rand(1, 1, 8, 8) > 0.5).float()
    assert attention_bce(m.clone(), m).item() < 1e-5


def test_bce_two_pixel_value():
    m = torch.tensor([1.0, 0.0], dtype=torch.float64)
    p = torch.tensor([0.9, 0.2], dtype=torch.float64)
    expected = -0.5 * (math.log(0.9) + math.log(0.8))
    assert attention_bce(p, m).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1643, abs=1e-4)


def test_bce_gradient_points_toward_target():
    m = torch.tensor([1.0, 0.0], dtype=torch.float64)
    p = torch.tensor([0.6, 0.3], dtype=torch.float64, requires_grad=True)
    attention_bce(p, m).backward()
    # descent raises the positive pixel and lowers the negative one
    assert p.grad[0] < 0 and p.grad[1] > 0


def test_objective_weights():
    assert generator_objective(0.0, 0.0, 0.0)[0] == 0.0
    assert generator_objective(1.0, 0.0, 0.0)[0] == 20.0
    total, comps = generator_objective(0.5, 0.01, 0.3)
    assert abs(total - (0.3 + 20 * 0.5 + 100 * 0.01)) < 1e-9
    assert abs(total - 11.3) < 1e-9
    assert comps == {"adv": 0.3, "perceptual": 0.5, "bce": 0.01, "total": total}


def test_objective_is_linear():
    w = LossWeights(lambda_perceptual=3.0, alpha_attention=7.0, adversarial=2.0)
    base = generator_objective(0.2, 0.1, 0.4, w)[0]
    assert generator_objective(0.2 + 1, 0.1, 0.4, w)[0] - base == pytest.approx(3.0)
    assert generator_objective(0.2, 0.1 + 1, 0.4, w)[0] - base == pytest.approx(7.0)
    assert generator_objective(0.2, 0.1, 0.4 + 1, w)[0] - base == pytest.approx(2.0)


@pytest.mark.parametrize("bad", ["adv", "perceptual", "bce"])
def test_objective_names_nonfinite_term(bad):
    vals = {"perceptual": 0.1, "bce": 0.1, "adv": 0.1}
    vals[bad] = torch.tensor(float("nan"))
    with pytest.raises(FloatingPointError, match=bad):
        generator_objective(vals["perceptual"], vals["bce"], vals["adv"])
