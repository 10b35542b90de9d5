"""Independent reference implementations used as test oracles.

Everything in this file is written as plainly as possible (explicit
loops, direct formulas) and never calls into the code paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


def central_difference(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Gradient of scalar f at x by central differences, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xflat = x.reshape(-1)
    for i in range(xflat.size):
        orig = xflat[i]
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] = orig + step
        xm[i] = orig - step
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * step)
    return grad


def conv2d_loops(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution via explicit loops."""
    h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((h, w, cout))
    for i in range(h):
        for j in range(w):
            for co in range(cout):
                acc = 0.0
                for di in range(kh):
                    for dj in range(kw):
                        ii, jj = i + di - ph, j + dj - pw
                        if 0 <= ii < h and 0 <= jj < w:
                            for ci in range(cin):
                                acc += x[ii, jj, ci] * kernel[di, dj, ci, co]
                out[i, j, co] = acc
    return out


def mse_loops(a: np.ndarray, b: np.ndarray) -> float:
    acc = 0.0
    af, bf = a.reshape(-1), b.reshape(-1)
    for i in range(af.size):
        d = af[i] - bf[i]
        acc += d * d
    return acc / af.size


def psnr_direct(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = mse_loops(a, b)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def pgd_reference(loss_grad, delta0: np.ndarray, alpha: float, eps: float, n_iters: int):
    """Straight-line sign-ascent PGD, independent of the library's step code.

    loss_grad(delta) must return (loss, grad) of the objective being
    maximized. Returns the list of per-iteration deltas (post-projection).
    """
    delta = delta0.copy()
    trajectory = []
    for _ in range(n_iters):
        _, g = loss_grad(delta)
        delta = delta + alpha * np.sign(g)
        delta = np.clip(delta, -eps, eps)
        trajectory.append(delta.copy())
    return trajectory


def gaussian_kernel_2d(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian, matching fspecial('gaussian', size, sigma)."""
    half = (size - 1) / 2.0
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1]
    k = np.exp(-(xs * xs + ys * ys) / (2.0 * sigma * sigma))
    return k / k.sum()


def ssim_windows(a: np.ndarray, b: np.ndarray, win: int = 11, sigma: float = 1.5,
                 k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """SSIM of one channel via an explicit loop over valid window positions."""
    h, w = a.shape
    kernel = gaussian_kernel_2d(win, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            pa = a[i:i + win, j:j + win]
            pb = b[i:i + win, j:j + win]
            mu1 = (kernel * pa).sum()
            mu2 = (kernel * pb).sum()
            s1 = (kernel * pa * pa).sum() - mu1 * mu1
            s2 = (kernel * pb * pb).sum() - mu2 * mu2
            s12 = (kernel * pa * pb).sum() - mu1 * mu2
            num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
            den = (mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2)
            vals.append(num / den)
    return float(np.mean(vals))


def sign_test_p(wins: int, trials: int) -> float:
    """One-sided exact sign test: P[Binom(trials, 1/2) >= wins]."""
    total = 0.0
    for k in range(wins, trials + 1):
        total += math.comb(trials, k)
    return total / (2.0 ** trials)
