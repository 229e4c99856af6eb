import numpy as np
from numba import njit

from ._constants import LAB_EPS, LAB_KAPPA, RGB_TO_XYZ, WHITE_D65

_M = np.asarray(RGB_TO_XYZ, dtype=np.float64)
_WHITE = np.asarray(WHITE_D65, dtype=np.float64)


@njit(cache=True)
def _lab_kernel(rgb, m, white, out):
    h, w = rgb.shape[0], rgb.shape[1]
    lin = np.empty(3)
    f = np.empty(3)
    for i in range(h):
        for j in range(w):
            for c in range(3):
                v = rgb[i, j, c]
                if v > 0.04045:
                    lin[c] = ((v + 0.055) / 1.055) ** 2.4
                else:
                    lin[c] = v / 12.92
            for r in range(3):
                t = (m[r, 0] * lin[0] + m[r, 1] * lin[1] + m[r, 2] * lin[2]) / white[r]
                if t > LAB_EPS:
                    f[r] = np.cbrt(t)
                else:
                    f[r] = LAB_KAPPA * t + 16.0 / 116.0
            out[i, j, 0] = 116.0 * f[1] - 16.0
            out[i, j, 1] = 500.0 * (f[0] - f[1])
            out[i, j, 2] = 200.0 * (f[1] - f[2])


def srgb_to_lab(img):
    rgb = np.ascontiguousarray(img, dtype=np.float64)
    out = np.empty(rgb.shape, dtype=np.float64)
    _lab_kernel(rgb, _M, _WHITE, out)
    return out


@njit(cache=True)
def _resize_kernel(x, out_h, out_w, out):
    h, w, ch = x.shape
    sr = h / out_h
    sc = w / out_w
    tmp = np.empty((out_h, w, ch))
    for i in range(out_h):
        s = min(max((i + 0.5) * sr - 0.5, 0.0), h - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, h - 1)
        wt = s - i0
        for j in range(w):
            for c in range(ch):
                a = x[i0, j, c]
                tmp[i, j, c] = a + wt * (x[i1, j, c] - a)
    for j in range(out_w):
        s = min(max((j + 0.5) * sc - 0.5, 0.0), w - 1.0)
        j0 = int(np.floor(s))
        j1 = min(j0 + 1, w - 1)
        wt = s - j0
        for i in range(out_h):
            for c in range(ch):
                a = tmp[i, j0, c]
                out[i, j, c] = a + wt * (tmp[i, j1, c] - a)


def resize_bilinear(img, out_h, out_w):
    x = np.ascontiguousarray(img, dtype=np.float64)
    out = np.empty((out_h, out_w, x.shape[2]), dtype=np.float64)
    _resize_kernel(x, out_h, out_w, out)
    return out


@njit(cache=True)
def _confusion_kernel(p, g):
    tp = 0
    tn = 0
    fp = 0
    fn = 0
    for k in range(p.size):
        if p[k]:
            if g[k]:
                tp += 1
            else:
                fp += 1
        elif g[k]:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


def confusion_counts(pred, gt):
    p = np.ascontiguousarray(pred, dtype=np.bool_).ravel()
    g = np.ascontiguousarray(gt, dtype=np.bool_).ravel()
    tp, tn, fp, fn = _confusion_kernel(p, g)
    return int(tp), int(tn), int(fp), int(fn)


@njit(cache=True)
def _reflect(i, n):
    # half-sample symmetric: ... c b a | a b c ... | c b a ...
    period = 2 * n
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - 1 - i
    return i


@njit(cache=True)
def _reflect_table(n, r):
    idx = np.empty(n + 2 * r, dtype=np.int64)
    for k in range(n + 2 * r):
        idx[k] = _reflect(k - r, n)
    return idx


@njit(cache=True)
def _gauss_kernel(x, win, out):
    h, w = x.shape
    size = win.size
    r = size // 2
    rows = _reflect_table(h, r)
    cols = _reflect_table(w, r)
    tmp = np.zeros((h, w))
    # row pass accumulates whole rows so the inner loop is contiguous
    for i in range(h):
        for k in range(size):
            src = rows[i + k]
            wk = win[k]
            for j in range(w):
                tmp[i, j] += wk * x[src, j]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for k in range(size):
                acc += win[k] * tmp[i, cols[j + k]]
            out[i, j] = acc


def gaussian_filter(plane, window):
    x = np.ascontiguousarray(plane, dtype=np.float64)
    out = np.empty_like(x)
    _gauss_kernel(x, np.ascontiguousarray(window, dtype=np.float64), out)
    return out
