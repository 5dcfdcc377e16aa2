"""Pixel-level quality metrics for creation scoring.

Three deterministic operations on RGB images:

* :func:`ssim` -- mean local structural similarity on BT.601 luma with the
  reference 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03 on unit range).
* :func:`estimate_noise` -- single-image noise standard deviation from the
  smallest eigenvalue of weak-texture 7x7 patch covariance, with a linear
  score mapping ``clamp(1 - sigma/sigma_ref, 0, 1)``.
* :func:`bilateral_filter` -- edge-preserving smoothing used by the attack
  post-processing pipeline.

All functions are pure; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.stats import chi2

from .errors import DegenerateInputError, ParameterError, ShapeError
from .imagebuf import LUMA_WEIGHTS, ImageBuf, as_float_array, luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

NOISE_PATCH = 7
NOISE_MAX_ITERS = 10
NOISE_REL_TOL = 1e-3
NOISE_CONFIDENCE = 1.0 - 1e-6
NOISE_MIN_PATCHES = 10
DEFAULT_SIGMA_REF = 25.0 / 255.0


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


_SSIM_KERNEL = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)


def _windowed_mean(arr: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local mean, cropped to windows fully inside the image."""
    r = SSIM_WINDOW // 2
    out = correlate1d(arr, _SSIM_KERNEL, axis=0, mode="constant")
    out = correlate1d(out, _SSIM_KERNEL, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim(a, b) -> float:
    """Mean structural similarity between two same-sized images, in [-1, 1].

    Computed on luma; symmetric in its arguments and exactly 1.0 when the
    inputs are identical.
    """
    fa = as_float_array(a)
    fb = as_float_array(b)
    if fa.shape != fb.shape:
        raise ShapeError(f"dimension mismatch: {fa.shape} vs {fb.shape}")
    if fa.shape[0] < SSIM_WINDOW or fa.shape[1] < SSIM_WINDOW:
        raise DegenerateInputError(
            f"image {fa.shape[1]}x{fa.shape[0]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = fa @ LUMA_WEIGHTS
    y = fb @ LUMA_WEIGHTS

    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2

    mu_x = _windowed_mean(x)
    mu_y = _windowed_mean(y)
    # E[x^2]-mu^2 style moments; the formula below is algebraically symmetric
    # in (x, y), so argument order cannot change the result.
    var_x = _windowed_mean(x * x) - mu_x * mu_x
    var_y = _windowed_mean(y * y) - mu_y * mu_y
    cov = _windowed_mean(x * y) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class NoiseEstimate:
    """Estimated noise level and its score-mapped value."""

    sigma_hat: float
    score: float
    patches_used: int
    weak_selection_failed: bool = False


def _patch_matrix(y: np.ndarray, size: int) -> np.ndarray:
    """All overlapping size x size patches as rows, shape (n, size*size)."""
    windows = np.lib.stride_tricks.sliding_window_view(y, (size, size))
    return windows.reshape(-1, size * size)


def _smallest_eig(patches: np.ndarray) -> float:
    centered = patches - patches.mean(axis=0)
    cov = centered.T @ centered / max(patches.shape[0] - 1, 1)
    return float(max(np.linalg.eigvalsh(cov)[0], 0.0))


def noise_score(sigma_hat: float, sigma_ref: float = DEFAULT_SIGMA_REF) -> float:
    """Map an estimated sigma to [0, 1]: clamp(1 - sigma/sigma_ref, 0, 1)."""
    if sigma_ref <= 0:
        raise ParameterError(f"sigma_ref must be positive, got {sigma_ref}")
    return float(min(max(1.0 - sigma_hat / sigma_ref, 0.0), 1.0))


def estimate_noise(img, sigma_ref: float = DEFAULT_SIGMA_REF) -> NoiseEstimate:
    """Estimate the additive noise standard deviation of a single image.

    Overlapping 7x7 luma patches are iteratively pruned to the weak-texture
    subset (patch variance below a chi-square quantile consistent with the
    current noise estimate); ``sigma_hat`` is the square root of the smallest
    eigenvalue of the retained patches' covariance.  Falls back to the
    all-patches eigenvalue, flagged, when fewer than 10 patches survive.
    """
    y = luma(img)
    min_side = 3 * NOISE_PATCH
    if y.shape[0] < min_side or y.shape[1] < min_side:
        raise DegenerateInputError(
            f"image {y.shape[1]}x{y.shape[0]} smaller than {min_side}px minimum "
            "for noise estimation"
        )
    patches = _patch_matrix(y, NOISE_PATCH)
    variances = patches.var(axis=1, ddof=1)

    dof = NOISE_PATCH * NOISE_PATCH - 1
    quantile = chi2.ppf(NOISE_CONFIDENCE, dof) / dof

    sigma2 = _smallest_eig(patches)
    global_sigma2 = sigma2
    used = patches.shape[0]
    failed = False
    for _ in range(NOISE_MAX_ITERS):
        keep = variances <= sigma2 * quantile
        n_keep = int(keep.sum())
        if n_keep < NOISE_MIN_PATCHES:
            sigma2 = global_sigma2
            used = patches.shape[0]
            failed = True
            break
        new_sigma2 = _smallest_eig(patches[keep])
        used = n_keep
        if sigma2 > 0 and abs(new_sigma2 - sigma2) / sigma2 < NOISE_REL_TOL:
            sigma2 = new_sigma2
            break
        sigma2 = new_sigma2

    sigma_hat = float(np.sqrt(sigma2))
    return NoiseEstimate(
        sigma_hat=sigma_hat,
        score=noise_score(sigma_hat, sigma_ref),
        patches_used=used,
        weak_selection_failed=failed,
    )


def bilateral_filter(
    img, spatial_sigma: float = 2.0, range_sigma: float = 0.1
) -> ImageBuf:
    """Edge-preserving smoothing with Gaussian spatial and range kernels.

    The spatial kernel is truncated at ``2 * spatial_sigma``; the range kernel
    is applied per channel.  Output dimensions match the input.
    """
    if spatial_sigma <= 0 or range_sigma <= 0:
        raise ParameterError(
            f"sigmas must be positive, got spatial={spatial_sigma} range={range_sigma}"
        )
    x = as_float_array(img)
    h, w, _ = x.shape
    radius = int(np.ceil(2.0 * spatial_sigma))
    pad = np.pad(x, ((radius, radius), (radius, radius), (0, 0)), mode="edge")

    acc = np.zeros_like(x)
    norm = np.zeros_like(x)
    inv_2ss = 1.0 / (2.0 * spatial_sigma * spatial_sigma)
    inv_2rs = 1.0 / (2.0 * range_sigma * range_sigma)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            sw = np.exp(-(dy * dy + dx * dx) * inv_2ss)
            shifted = pad[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            diff = shifted - x
            wgt = sw * np.exp(-(diff * diff) * inv_2rs)
            acc += wgt * shifted
            norm += wgt
    return ImageBuf.from_floats(acc / norm)


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Plain Gaussian convolution (edge-replicated), float output.

    Shares the truncation rule with :func:`bilateral_filter`; serves as its
    infinite-range-sigma limit.
    """
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    x = as_float_array(img)
    h, w, _ = x.shape
    radius = int(np.ceil(2.0 * sigma))
    pad = np.pad(x, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    acc = np.zeros_like(x)
    norm = 0.0
    inv_2ss = 1.0 / (2.0 * sigma * sigma)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            sw = np.exp(-(dy * dy + dx * dx) * inv_2ss)
            acc += sw * pad[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            norm += sw
    return acc / norm
