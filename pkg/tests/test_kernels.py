import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ghostfree.kernels import _numba, _numpy, gaussian_window

unit = st.floats(0.0, 1.0, allow_nan=False, width=64)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3)), elements=unit))
def test_lab_backends_agree(img):
    np.testing.assert_allclose(_numba.srgb_to_lab(img), _numpy.srgb_to_lab(img), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12), st.integers(1, 3)), elements=unit),
    st.integers(1, 20),
    st.integers(1, 20),
)
def test_resize_backends_agree(img, oh, ow):
    np.testing.assert_allclose(_numba.resize_bilinear(img, oh, ow), _numpy.resize_bilinear(img, oh, ow), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(1, 16), st.integers(1, 16))), st.randoms())
def test_confusion_backends_agree(pred, r):
    gt = np.array([r.random() < 0.5 for _ in range(pred.size)]).reshape(pred.shape)
    assert _numba.confusion_counts(pred, gt) == _numpy.confusion_counts(pred, gt)


@pytest.mark.parametrize("shape", [(8, 8), (3, 17), (40, 31), (2, 2)])
def test_gaussian_backends_agree(shape, rng):
    x = rng.random(shape)
    w = gaussian_window(11, 1.5)
    np.testing.assert_allclose(_numba.gaussian_filter(x, w), _numpy.gaussian_filter(x, w), atol=1e-12)


def test_gaussian_window_normalised():
    w = gaussian_window(11, 1.5)
    assert w.shape == (11,)
    assert abs(w.sum() - 1.0) < 1e-15
    assert np.allclose(w, w[::-1])


def test_backend_flag(monkeypatch):
    import importlib

    import ghostfree.kernels as k

    monkeypatch.setenv("GHOSTFREE_NO_NUMBA", "1")
    try:
        assert importlib.reload(k).BACKEND == "numpy"
    finally:
        monkeypatch.delenv("GHOSTFREE_NO_NUMBA")
        importlib.reload(k)
