"""Image I/O, cubic resampling, colour conversion and dihedral transforms."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DataError

IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


# ----------------------------------------------------------------- file I/O


def load_image(path) -> np.ndarray:
    """Read an image as uint8 (H, W, 3) RGB."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_png(path, img: np.ndarray):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("save_png expects uint8 data; call quantize() first")
    Image.fromarray(img).save(path, format="PNG", optimize=False)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def quantize(img) -> np.ndarray:
    """Round to the nearest integer and clip into uint8."""
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def to_chw(img_u8: np.ndarray) -> np.ndarray:
    """uint8 HWC -> float32 CHW in [0, 1]."""
    return np.ascontiguousarray(img_u8.transpose(2, 0, 1), dtype=np.float32) / 255.0


def to_hwc_u8(chw: np.ndarray) -> np.ndarray:
    """float CHW in [0, 1] -> uint8 HWC; clamping happens here only."""
    return quantize(np.asarray(chw, dtype=np.float64).transpose(1, 2, 0) * 255.0)


def modcrop(img, scale):
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


# --------------------------------------------------------------- resampling


def cubic(x, a=-0.5):
    """Keys cubic convolution kernel."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return np.where(
        ax <= 1, (a + 2) * ax3 - (a + 3) * ax2 + 1,
        np.where(ax < 2, a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a, 0.0))


def _edge_index(idx, n, edge):
    if edge == "clamp":
        return np.clip(idx, 0, n - 1)
    if edge == "symmetric":
        period = 2 * n
        m = np.mod(idx, period)
        return np.where(m < n, m, period - 1 - m)
    raise ConfigurationError(f"edge must be 'clamp' or 'symmetric', got {edge!r}")


def resize_matrix(in_len, out_len, factor, antialias=True, edge="clamp", a=-0.5):
    """Dense (out_len, in_len) matrix of normalised cubic weights.

    Output pixel i samples input coordinate (i + 0.5) / factor - 0.5; on
    downscaling the kernel is stretched by 1 / factor.
    """
    stretch = factor < 1 and antialias
    width = 4.0 / factor if stretch else 4.0
    u = (np.arange(out_len) + 0.5) / factor - 0.5
    left = np.floor(u - width / 2).astype(np.int64) + 1
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(-1, taps - 1)[None, :]
    dist = u[:, None] - idx
    wts = factor * cubic(factor * dist, a) if stretch else cubic(dist, a)
    wts = wts / wts.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, _edge_index(idx, in_len, edge).ravel()), wts.ravel())
    return mat


def bicubic_resize(img, factor, antialias=True, edge="clamp"):
    """Resize the two leading axes of ``img`` (H, W[, C]) by ``factor``.

    Output size is ceil(factor * size). Values are returned as float64 and
    are not clipped or rounded.
    """
    if factor <= 0:
        raise ConfigurationError(f"resize factor must be positive, got {factor}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    oh, ow = int(math.ceil(h * factor - 1e-9)), int(math.ceil(w * factor - 1e-9))
    rh = resize_matrix(h, oh, factor, antialias, edge)
    rw = resize_matrix(w, ow, factor, antialias, edge)
    out = np.tensordot(rh, img, axes=(1, 0))
    out = np.tensordot(rw, out, axes=(1, 1)).swapaxes(0, 1)
    return np.ascontiguousarray(out)


# ------------------------------------------------------------------- colour


def rgb_to_y(img, channel_axis=0):
    """Studio-swing BT.601 luma of RGB data in [0, 255]: values in [16, 235]."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[channel_axis] != 3:
        raise ConfigurationError(f"rgb_to_y needs 3 channels on axis {channel_axis}, got {img.shape}")
    r, g, b = np.moveaxis(img, channel_axis, 0)
    y = 16.0 + (65.738 * r + 129.057 * g + 25.064 * b) / 256.0
    return np.expand_dims(y, channel_axis)


# ----------------------------------------------------------------- dihedral


def dihedral(x, code, axes=(-2, -1)):
    """One of the 8 flips/rotations: flip the last spatial axis when
    ``code >= 4``, then rotate by 90 * (code % 4) degrees."""
    if not 0 <= code < 8:
        raise ValueError(f"dihedral code must be in 0..7, got {code}")
    if code >= 4:
        x = np.flip(x, axis=axes[1])
    return np.ascontiguousarray(np.rot90(x, code % 4, axes=axes))


def dihedral_inverse(x, code, axes=(-2, -1)):
    x = np.rot90(x, -(code % 4), axes=axes)
    if code >= 4:
        x = np.flip(x, axis=axes[1])
    return np.ascontiguousarray(x)
