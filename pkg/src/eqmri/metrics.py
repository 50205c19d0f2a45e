"""Image quality metrics on magnitude images."""

import numpy as np


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, peak taken from the reference.

    Capped at 300 dB so identical images give a finite number.
    """
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {ref.shape}")
    peak = ref.max() if ref.size else 0.0
    if peak <= 0.0:
        raise ValueError("reference image has no positive peak")
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return 300.0
    return float(min(10.0 * np.log10(peak**2 / mse), 300.0))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g2 = np.outer(g, g)
    return g2 / g2.sum()


def ssim(
    img: np.ndarray,
    ref: np.ndarray,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Mean structural similarity with a Gaussian window, valid-region only.

    The reference is assumed to live on a [0, data_range] scale.
    """
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {ref.shape}")
    if img.ndim != 2:
        raise ValueError(f"expected 2-d magnitude images, got shape {img.shape}")
    if min(img.shape) < window:
        raise ValueError(f"image {img.shape} smaller than the {window}x{window} window")
    g = _gaussian_window(window, sigma)

    def local_mean(a):
        win = np.lib.stride_tricks.sliding_window_view(a, (window, window))
        return np.einsum("ijkl,kl->ij", win, g)

    mu_x = local_mean(img)
    mu_y = local_mean(ref)
    xx = local_mean(img * img) - mu_x**2
    yy = local_mean(ref * ref) - mu_y**2
    xy = local_mean(img * ref) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))
