"""Slow, loop-based reference implementations used as independent test oracles.

Nothing here imports the package; everything is plain numpy / python loops.
"""
import math

import numpy as np


def mirror(i, n):
    """Reflect index i into [0, n) without repeating the edge sample."""
    if n == 1:
        return 0
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * (n - 1) - i
    return i


def gauss_taps(size, std):
    r = size // 2
    taps = [math.exp(-((i - r) ** 2) / (2 * std * std)) for i in range(size)]
    s = sum(taps)
    return [t / s for t in taps]


def blur2d(img, size, std=None):
    """Direct (non-separable) 2-D convolution of a (h, w) array with reflect borders."""
    std = size / 3.0 if std is None else std
    g = gauss_taps(size, std)
    k2 = [[g[a] * g[b] for b in range(size)] for a in range(size)]
    h, w = img.shape
    r = size // 2
    rows = [[mirror(i + a - r, h) for a in range(size)] for i in range(h)]
    cols = [[mirror(j + b - r, w) for b in range(size)] for j in range(w)]
    px = img.tolist()
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(size):
                line = px[rows[i][a]]
                for b in range(size):
                    acc += k2[a][b] * line[cols[j][b]]
            out[i, j] = acc
    return out


def blur_batch(x, size, std=None):
    out = np.zeros_like(x, dtype=np.float64)
    for n in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[n, c] = blur2d(x[n, c], size, std)
    return out


def mse_loop(a, b):
    a, b = np.ravel(a), np.ravel(b)
    s = 0.0
    for u, v in zip(a, b):
        s += (float(u) - float(v)) ** 2
    return s / len(a)


def psnr_loop(a, b, peak=1.0):
    m = mse_loop(a, b)
    if m == 0:
        return 100.0
    return min(100.0, 10 * math.log10(peak * peak / m))


def ssim2d(a, b, size=11, std=1.5, L=1.0):
    """Windowed SSIM averaged over the valid region, computed window by window."""
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    g = gauss_taps(size, std)
    wdw = np.array([[g[i] * g[j] for j in range(size)] for i in range(size)])
    h, w = a.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            pa = a[i : i + size, j : j + size]
            pb = b[i : i + size, j : j + size]
            ma, mb = (wdw * pa).sum(), (wdw * pb).sum()
            va = (wdw * (pa - ma) ** 2).sum()
            vb = (wdw * (pb - mb) ** 2).sum()
            cov = (wdw * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def ssim_image(a, b, size=11, std=1.5):
    """Mean over channels of ssim2d for one (c, h, w) image."""
    return float(np.mean([ssim2d(a[c], b[c], size, std) for c in range(a.shape[0])]))


def l1_mean(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return sum(abs(float(u) - float(v)) for u, v in zip(a, b)) / len(a)


def lsgan_d(real_scores, fake_scores):
    r = np.ravel(real_scores)
    f = np.ravel(fake_scores)
    return sum((float(v) - 1) ** 2 for v in r) / len(r) + sum(float(v) ** 2 for v in f) / len(f)


def lsgan_g(fake_scores):
    f = np.ravel(fake_scores)
    return sum((float(v) - 1) ** 2 for v in f) / len(f)


def bgm(content, synthetic, levels=((3, 0.01), (9, 0.1), (15, 1.0))):
    total = 0.0
    for size, weight in levels:
        total += weight * l1_mean(blur_batch(content, size), blur_batch(synthetic, size))
    return total


def dn_bracket(pred, target, lam=1.0, size=11):
    """Per-image L1 + lam * (1 - SSIM)."""
    return [l1_mean(p, t) + lam * (1 - ssim_image(p, t, size)) for p, t in zip(pred, target)]


def dn(pred, target, lam=1.0, size=11):
    terms = dn_bracket(pred, target, lam, size)
    return sum(terms) / (2 * len(terms))


def dn_sc(x_rec, x, y_rec, teach_x, teach_y, lam=1.0, size=11):
    m = len(x_rec)
    extra = sum(dn_bracket(x_rec, teach_x, lam, size)) + sum(dn_bracket(y_rec, teach_y, lam, size))
    return dn(x_rec, x, lam, size) + extra / (2 * m)


def conv_params(cin, cout, k, bias=True):
    return cin * cout * k * k + (cout if bias else 0)


def central_difference(f, x, h=1e-3, order=4):
    """Central finite-difference gradient of scalar f at numpy array x.

    ``order=2`` is the 3-point stencil, ``order=4`` the 5-point stencil
    (same step, truncation error O(h^4) instead of O(h^2)).
    """
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]

        def at(offset):
            x[idx] = orig + offset
            return f(x)

        if order == 2:
            g[idx] = (at(h) - at(-h)) / (2 * h)
        else:
            g[idx] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
        x[idx] = orig
    return g
