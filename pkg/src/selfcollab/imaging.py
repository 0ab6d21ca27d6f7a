"""Deterministic image mathematics shared by the losses, trainer and metrics.

Everything here operates on NCHW ``torch.Tensor`` batches and is differentiable
where it makes sense (blur and SSIM). Metrics (PSNR) return plain floats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DEFAULT_BLUR_LEVELS = ((3, 0.01), (9, 0.1), (15, 1.0))


@dataclass(frozen=True)
class BlurBank:
    """Ordered (window size, weight) pairs for the multi-scale background loss."""

    levels: tuple[tuple[int, float], ...] = field(default=DEFAULT_BLUR_LEVELS)
    std_ratio: float = 1.0 / 3.0

    def __post_init__(self):
        for size, weight in self.levels:
            _check_window(size)
            if weight < 0:
                raise ValueError(f"blur weight must be nonnegative, got {weight}")


def _check_window(size) -> None:
    if isinstance(size, bool) or not isinstance(size, (int, np.integer)):
        raise ValueError(f"blur window must be an integer, got {size!r}")
    if size < 1 or size % 2 == 0:
        raise ValueError(f"blur window must be odd and positive, got {size}")


def gaussian_kernel1d(size: int, std: float | None = None, dtype=torch.float64) -> torch.Tensor:
    """Normalized 1-D Gaussian taps; ``std`` defaults to ``size / 3``."""
    _check_window(size)
    if std is None:
        std = size / 3.0
    radius = size // 2
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(coords**2) / (2.0 * std * std))
    taps /= taps.sum()
    return torch.as_tensor(taps, dtype=dtype)


def reflect_indices(n: int, pad: int) -> torch.Tensor:
    """Indices of a length-``n`` axis extended by ``pad`` on each side with
    mirror reflection (edge sample not repeated). Works for any ``pad``,
    unlike ``F.pad(mode="reflect")`` which requires ``pad < n``."""
    idx = torch.arange(-pad, n + pad)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    m = torch.remainder(idx, period)
    return torch.where(m < n, m, period - m)


def reflect_pad(img: torch.Tensor, pad: int) -> torch.Tensor:
    if pad == 0:
        return img
    h, w = img.shape[-2:]
    img = img.index_select(-2, reflect_indices(h, pad).to(img.device))
    return img.index_select(-1, reflect_indices(w, pad).to(img.device))


def _check_batch(img: torch.Tensor, name: str = "img") -> None:
    if img.dim() != 4:
        raise ValueError(f"{name} must be a 4-D (n, c, h, w) tensor, got shape {tuple(img.shape)}")


def gaussian_blur(img: torch.Tensor, sigma: int, std: float | None = None) -> torch.Tensor:
    """Separable Gaussian blur with an odd ``sigma x sigma`` window and reflect padding.

    ``sigma`` is the window size; the Gaussian standard deviation is
    ``sigma / 3`` unless ``std`` is given. The kernel sums to one, so constant
    images pass through unchanged.
    """
    _check_window(sigma)
    _check_batch(img)
    if sigma == 1:
        return img
    n, c, h, w = img.shape
    taps = gaussian_kernel1d(sigma, std, dtype=img.dtype).to(img.device)
    flat = reflect_pad(img.reshape(n * c, 1, h, w), sigma // 2)
    flat = F.conv2d(flat, taps.view(1, 1, 1, sigma))
    flat = F.conv2d(flat, taps.view(1, 1, sigma, 1))
    return flat.reshape(n, c, h, w)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all elements, capped at 100 dB."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def _ssim_window(size: int, std: float, channels: int, dtype, device) -> torch.Tensor:
    g = gaussian_kernel1d(size, std, dtype=dtype).to(device)
    return torch.outer(g, g).expand(channels, 1, size, size).contiguous()


def ssim_map(
    a: torch.Tensor,
    b: torch.Tensor,
    window_size: int = SSIM_WINDOW,
    window_std: float = SSIM_SIGMA,
    data_range: float = 1.0,
) -> torch.Tensor:
    """Per-pixel SSIM over the valid (unpadded) region, shape (n, c, h', w')."""
    _check_batch(a, "a")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    h, w = a.shape[-2:]
    if h < window_size or w < window_size:
        raise ValueError(f"image {h}x{w} is smaller than the {window_size}x{window_size} SSIM window")
    c = a.shape[1]
    win = _ssim_window(window_size, window_std, c, a.dtype, a.device)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(t):
        return F.conv2d(t, win, groups=c)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim_per_image(a: torch.Tensor, b: torch.Tensor, **kw) -> torch.Tensor:
    """SSIM per batch entry, averaged over channels and valid pixels."""
    return ssim_map(a, b, **kw).mean(dim=(1, 2, 3))


def ssim(a: torch.Tensor, b: torch.Tensor, **kw) -> torch.Tensor:
    return ssim_per_image(a, b, **kw).mean()


def ssim_loss(a: torch.Tensor, b: torch.Tensor, **kw) -> torch.Tensor:
    return 1.0 - ssim(a, b, **kw)


def patch_coords(n: int, h: int, w: int, patch: int, count: int, seed: int) -> np.ndarray:
    """Crop origins as an int array of rows ``(image index, top, left)``.

    Depends only on the arguments, so two batches of equal shape cropped
    with the same seed get aligned crops.
    """
    if patch < 1 or patch > min(h, w):
        raise ValueError(f"patch {patch} does not fit a {h}x{w} image")
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=count)
    top = rng.integers(0, h - patch + 1, size=count)
    left = rng.integers(0, w - patch + 1, size=count)
    return np.stack([idx, top, left], axis=1)


def extract_patches(img: torch.Tensor, patch: int, count: int, seed: int) -> torch.Tensor:
    _check_batch(img)
    n, _, h, w = img.shape
    coords = patch_coords(n, h, w, patch, count, seed)
    return torch.stack([img[i, :, t : t + patch, l : l + patch] for i, t, l in coords])
