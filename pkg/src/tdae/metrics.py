"""Classical full-reference image quality metrics: PSNR, SSIM, VIFP, FSIM.

All metrics take float images in [0, 1], shaped (H, W) or (H, W, C).
PSNR and SSIM are channel-averaged on RGB; VIFP and FSIM operate on the
ITU-R 601 luma. Constants follow the original metric definitions for an
8-bit dynamic range, so luma-based metrics rescale internally to
[0, 255].

Conventions for degenerate inputs:

* ``psnr(a, a)`` returns ``math.inf`` (zero-MSE sentinel).
* VIFP of a zero-information reference (constant image) is defined as
  1.0 against itself and 0.0 otherwise.
* FSIM of two images with an all-zero phase-congruency weight map falls
  back to the unweighted mean similarity.

VIFP is reference-directional: the first argument is the reference.
PSNR, SSIM and FSIM are symmetric in their arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.signal import convolve2d

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class MetricReport:
    """One row of quality scores; None marks a metric its input can't support."""

    psnr: Optional[float]
    ssim: Optional[float]
    vifp: Optional[float]
    fsim: Optional[float]
    vifp_scales: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "vifp": self.vifp,
            "fsim": self.fsim,
            "vifp_scales": self.vifp_scales,
        }


def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError(f"images must be (H, W) or (H, W, C), got {a.shape}")
    return a, b


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    if img.shape[2] == 3:
        r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
        return _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b
    raise ValueError(f"expected 1 or 3 channels, got {img.shape[2]}")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian (matches fspecial-style construction)."""
    half = (size - 1) / 2.0
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1]
    k = np.exp(-(xs * xs + ys * ys) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return convolve2d(img, kernel, mode="valid")


# ---------------------------------------------------------------------------
# PSNR


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf when the images are identical."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# SSIM


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Structural similarity: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Channel-averaged; mean over valid window positions. The window
    shrinks to the largest odd size that fits when an image side is
    below 11 pixels.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w = a.shape[:2]
    win = min(11, h, w)
    if win % 2 == 0:
        win -= 1
    if win < 3:
        raise ValueError(f"image too small for SSIM: {(h, w)}")
    kernel = gaussian_kernel(win, 1.5)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu1 = _filter_valid(x, kernel)
        mu2 = _filter_valid(y, kernel)
        s1 = _filter_valid(x * x, kernel) - mu1 * mu1
        s2 = _filter_valid(y * y, kernel) - mu2 * mu2
        s12 = _filter_valid(x * y, kernel) - mu1 * mu2
        num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
        den = (mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# VIFP


def vifp_details(a: np.ndarray, b: np.ndarray) -> Tuple[float, int]:
    """Pixel-domain visual information fidelity plus the scale count used.

    Four pyramid levels with 2x downsampling when the image is large
    enough; levels that no longer fit are dropped and the count of
    levels actually used is returned alongside the score. The first
    argument is the reference.
    """
    a, b = _check_pair(a, b)
    ref = _luma(a) * 255.0
    dist = _luma(b) * 255.0

    sigma_nsq = 2.0
    eps = 1e-10
    num = 0.0
    den = 0.0
    scales_used = 0

    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        kernel = gaussian_kernel(n, n / 5.0)
        if scale > 1:
            if min(ref.shape) < n:
                break
            ref = _filter_valid(ref, kernel)[::2, ::2]
            dist = _filter_valid(dist, kernel)[::2, ::2]
        if min(ref.shape) < n:
            break

        mu1 = _filter_valid(ref, kernel)
        mu2 = _filter_valid(dist, kernel)
        mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
        sigma1_sq = _filter_valid(ref * ref, kernel) - mu1_sq
        sigma2_sq = _filter_valid(dist * dist, kernel) - mu2_sq
        sigma12 = _filter_valid(ref * dist, kernel) - mu1_mu2
        sigma1_sq = np.maximum(sigma1_sq, 0.0)
        sigma2_sq = np.maximum(sigma2_sq, 0.0)

        g = sigma12 / (sigma1_sq + eps)
        sv_sq = sigma2_sq - g * sigma12

        g = np.where(sigma1_sq < eps, 0.0, g)
        sv_sq = np.where(sigma1_sq < eps, sigma2_sq, sv_sq)
        sigma1_sq = np.where(sigma1_sq < eps, 0.0, sigma1_sq)
        g = np.where(sigma2_sq < eps, 0.0, g)
        sv_sq = np.where(sigma2_sq < eps, 0.0, sv_sq)
        sv_sq = np.where(g < 0.0, sigma2_sq, sv_sq)
        g = np.maximum(g, 0.0)
        sv_sq = np.maximum(sv_sq, eps)

        num += float(np.sum(np.log10(1.0 + g * g * sigma1_sq / (sv_sq + sigma_nsq))))
        den += float(np.sum(np.log10(1.0 + sigma1_sq / sigma_nsq)))
        scales_used += 1

    if scales_used == 0:
        raise ValueError(f"image too small for VIFP: {a.shape}")
    if den == 0.0:
        # zero-information reference: identical means full fidelity
        return (1.0 if num == 0.0 else 0.0), scales_used
    return num / den, scales_used


def vifp(a: np.ndarray, b: np.ndarray) -> float:
    return vifp_details(a, b)[0]


# ---------------------------------------------------------------------------
# FSIM: phase congruency (log-Gabor bank) + Scharr gradient similarity

_PC_NSCALE = 4
_PC_NORIENT = 4
_PC_MIN_WAVELENGTH = 6.0
_PC_MULT = 2.0
_PC_SIGMA_ONF = 0.55
_PC_DTHETA_ON_SIGMA = 1.2
_PC_K = 2.0
_PC_EPS = 1e-4

_SCHARR_X = np.array([[3.0, 0.0, -3.0],
                      [10.0, 0.0, -10.0],
                      [3.0, 0.0, -3.0]]) / 16.0


def _frequency_grid(rows: int, cols: int):
    if cols % 2:
        xr = np.arange(-(cols - 1) / 2, (cols - 1) / 2 + 1) / (cols - 1)
    else:
        xr = np.arange(-cols / 2, cols / 2) / cols
    if rows % 2:
        yr = np.arange(-(rows - 1) / 2, (rows - 1) / 2 + 1) / (rows - 1)
    else:
        yr = np.arange(-rows / 2, rows / 2) / rows
    x, y = np.meshgrid(xr, yr)
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    return radius, theta


def _lowpass_filter(rows: int, cols: int, cutoff: float = 0.45, order: int = 15) -> np.ndarray:
    radius, _ = _frequency_grid(rows, cols)
    radius[0, 0] = 0.0  # restore the DC radius for the butterworth profile
    return 1.0 / (1.0 + (radius / cutoff) ** (2 * order))


def phase_congruency(img: np.ndarray) -> np.ndarray:
    """Phase-congruency map from a 4-scale, 4-orientation log-Gabor bank."""
    rows, cols = img.shape
    imfft = np.fft.fft2(img)
    radius, theta = _frequency_grid(rows, cols)
    sintheta, costheta = np.sin(theta), np.cos(theta)
    lp = _lowpass_filter(rows, cols)

    log_gabor = []
    for s in range(_PC_NSCALE):
        wavelength = _PC_MIN_WAVELENGTH * _PC_MULT ** s
        fo = 1.0 / wavelength
        g = np.exp(-np.log(radius / fo) ** 2 / (2.0 * math.log(_PC_SIGMA_ONF) ** 2))
        g = g * lp
        g[0, 0] = 0.0
        log_gabor.append(g)

    theta_sigma = math.pi / _PC_NORIENT / _PC_DTHETA_ON_SIGMA
    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))

    for o in range(_PC_NORIENT):
        angl = o * math.pi / _PC_NORIENT
        ds = sintheta * math.cos(angl) - costheta * math.sin(angl)
        dc = costheta * math.cos(angl) + sintheta * math.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-dtheta ** 2 / (2.0 * theta_sigma ** 2))

        eo = []
        ifft_filters = []
        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        em_n = 0.0
        for s in range(_PC_NSCALE):
            filt = log_gabor[s] * spread
            ifft_filters.append(np.real(np.fft.ifft2(filt)) * math.sqrt(rows * cols))
            response = np.fft.ifft2(imfft * filt)
            eo.append(response)
            an = np.abs(response)
            sum_an += an
            sum_e += np.real(response)
            sum_o += np.imag(response)
            if s == 0:
                em_n = float(np.sum(filt ** 2))

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + _PC_EPS
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for s in range(_PC_NSCALE):
            e_part, o_part = np.real(eo[s]), np.imag(eo[s])
            energy += e_part * mean_e + o_part * mean_o \
                - np.abs(e_part * mean_o - o_part * mean_e)

        # noise threshold estimated from the smallest-scale response
        median_e2n = float(np.median(np.abs(eo[0]) ** 2))
        mean_e2n = -median_e2n / math.log(0.5)
        noise_power = mean_e2n / em_n
        est_sum_an2 = np.zeros((rows, cols))
        for s in range(_PC_NSCALE):
            est_sum_an2 += ifft_filters[s] ** 2
        est_sum_aiaj = np.zeros((rows, cols))
        for si in range(_PC_NSCALE - 1):
            for sj in range(si + 1, _PC_NSCALE):
                est_sum_aiaj += ifft_filters[si] * ifft_filters[sj]
        est_noise_energy2 = (2.0 * noise_power * float(np.sum(est_sum_an2))
                             + 4.0 * noise_power * float(np.sum(est_sum_aiaj)))
        tau = math.sqrt(est_noise_energy2 / 2.0)
        est_noise_energy = tau * math.sqrt(math.pi / 2.0)
        est_noise_sigma = math.sqrt((2.0 - math.pi / 2.0) * tau ** 2)
        threshold = (est_noise_energy + _PC_K * est_noise_sigma) / 1.7

        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an

    return energy_all / (an_all + _PC_EPS)


def _scharr_gradient(img: np.ndarray) -> np.ndarray:
    gx = convolve2d(img, _SCHARR_X, mode="same", boundary="fill")
    gy = convolve2d(img, _SCHARR_X.T, mode="same", boundary="fill")
    return np.sqrt(gx * gx + gy * gy)


def fsim(a: np.ndarray, b: np.ndarray) -> float:
    """Feature similarity: phase congruency + gradient magnitude, T1=0.85, T2=160.

    Constants apply to an 8-bit dynamic range; unit-range inputs are
    rescaled internally. Symmetric in its arguments.
    """
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < 32:
        raise ValueError(f"image too small for FSIM: {a.shape}")
    y1 = _luma(a) * 255.0
    y2 = _luma(b) * 255.0

    # average-pool downsampling toward ~256px, a no-op at desk scale
    factor = max(1, round(min(y1.shape) / 256))
    if factor > 1:
        pool = np.ones((factor, factor)) / (factor * factor)
        y1 = convolve2d(y1, pool, mode="same", boundary="fill")[::factor, ::factor]
        y2 = convolve2d(y2, pool, mode="same", boundary="fill")[::factor, ::factor]

    pc1 = phase_congruency(y1)
    pc2 = phase_congruency(y2)
    g1 = _scharr_gradient(y1)
    g2 = _scharr_gradient(y2)

    t1, t2 = 0.85, 160.0
    pc_sim = (2.0 * pc1 * pc2 + t1) / (pc1 * pc1 + pc2 * pc2 + t1)
    grad_sim = (2.0 * g1 * g2 + t2) / (g1 * g1 + g2 * g2 + t2)
    pc_max = np.maximum(pc1, pc2)
    sim = pc_sim * grad_sim

    weight_sum = float(np.sum(pc_max))
    if weight_sum == 0.0:
        # no phase structure anywhere (e.g. constant images): unweighted mean
        return float(np.mean(sim))
    return float(np.sum(sim * pc_max) / weight_sum)


# ---------------------------------------------------------------------------


def metric_report(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> MetricReport:
    """All four metrics of b against reference a; None where the size disallows one."""
    a, b = _check_pair(a, b)
    psnr_val = psnr(a, b, peak=peak)
    ssim_val = ssim(a, b, peak=peak)
    try:
        vifp_val, vifp_scales = vifp_details(a, b)
    except ValueError:
        vifp_val, vifp_scales = None, None
    try:
        fsim_val = fsim(a, b)
    except ValueError:
        fsim_val = None
    return MetricReport(psnr=psnr_val, ssim=ssim_val, vifp=vifp_val,
                        fsim=fsim_val, vifp_scales=vifp_scales)
