import numpy as np
from scipy import ndimage

from ._constants import LAB_EPS, LAB_KAPPA, RGB_TO_XYZ, WHITE_D65

_M = np.asarray(RGB_TO_XYZ, dtype=np.float64)
_WHITE = np.asarray(WHITE_D65, dtype=np.float64)


def srgb_to_lab(img):
    rgb = np.asarray(img, dtype=np.float64)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = (lin @ _M.T) / _WHITE
    f = np.where(xyz > LAB_EPS, np.cbrt(xyz), LAB_KAPPA * xyz + 16.0 / 116.0)
    out = np.empty_like(f)
    out[..., 0] = 116.0 * f[..., 1] - 16.0
    out[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    out[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return out


def _axis_coords(n_in, n_out):
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img, out_h, out_w):
    x = np.asarray(img, dtype=np.float64)
    r0, r1, wr = _axis_coords(x.shape[0], out_h)
    c0, c1, wc = _axis_coords(x.shape[1], out_w)
    a, b = x[r0], x[r1]
    rows = a + wr[:, None, None] * (b - a)
    a, b = rows[:, c0], rows[:, c1]
    return a + wc[None, :, None] * (b - a)


def confusion_counts(pred, gt):
    p = np.asarray(pred, dtype=bool).ravel()
    g = np.asarray(gt, dtype=bool).ravel()
    tp = int(np.count_nonzero(p & g))
    tn = int(np.count_nonzero(~p & ~g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, tn, fp, fn


def gaussian_filter(plane, window):
    """Separable correlation of a 2-D plane with half-sample symmetric borders."""
    x = np.asarray(plane, dtype=np.float64)
    w = np.asarray(window, dtype=np.float64)
    x = ndimage.correlate1d(x, w, axis=0, mode="reflect")
    return ndimage.correlate1d(x, w, axis=1, mode="reflect")
