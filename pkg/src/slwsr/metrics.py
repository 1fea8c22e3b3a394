"""PSNR and SSIM on single-channel images."""
import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConfigurationError

PSNR_IDENTICAL = 99.0


def shave_border(img, shave):
    if shave <= 0:
        return img
    out = img[..., shave:-shave, shave:-shave]
    if out.size == 0:
        raise ConfigurationError(f"nothing left after shaving {shave} pixels from {img.shape}")
    return out


def psnr(a, b, shave=0, data_range=255.0):
    """10 * log10(range^2 / MSE) after removing ``shave`` border pixels.

    Identical inputs return the 99 dB sentinel instead of infinity.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = shave_border(a, shave) - shave_border(b, shave)
    mse = np.mean(diff * diff)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(data_range ** 2 / mse))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    r = len(g) // 2
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim(a, b, data_range=255.0, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity over all valid Gaussian-window positions."""
    a = np.squeeze(np.asarray(a, dtype=np.float64))
    b = np.squeeze(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape or a.ndim != 2:
        raise ConfigurationError(f"ssim needs two equal 2D images, got {a.shape} and {b.shape}")
    if min(a.shape) < window:
        raise ConfigurationError(f"image {a.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
