"""Training pairs and aligned random patch sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import DataError
from .evaluation import find_lr, make_lr
from .imaging import dihedral, list_images, load_image, modcrop, to_chw

logger = logging.getLogger(__name__)


@dataclass
class ImagePair:
    """Full LR/HR images as float32 CHW in [0, 1]."""

    source_id: str
    lr: np.ndarray
    hr: np.ndarray


@dataclass
class SamplePair:
    lr_patch: np.ndarray  # (3, p, p)
    hr_patch: np.ndarray  # (3, scale*p, scale*p)
    source_id: str
    offset: tuple  # (x, y) in LR pixels
    augmentation_code: int


def pair_from_hr(hr_u8, scale, source_id="image"):
    hr_u8 = modcrop(hr_u8, scale)
    return ImagePair(source_id, to_chw(make_lr(hr_u8, scale)), to_chw(hr_u8))


def load_dataset(hr_dir, scale, lr_dir=None) -> List[ImagePair]:
    """Read every image in ``hr_dir``; LR counterparts come from ``lr_dir``
    (``name.png`` or ``namex{scale}.png``) or are made by bicubic downscaling."""
    hr_dir = Path(hr_dir)
    if not hr_dir.is_dir():
        raise DataError(f"dataset directory not found: {hr_dir}")
    paths = list_images(hr_dir)
    if not paths:
        raise DataError(f"no images in {hr_dir}")
    pairs = []
    for p in paths:
        hr = load_image(p)
        if lr_dir is None:
            pairs.append(pair_from_hr(hr, scale, p.stem))
            continue
        lr = load_image(find_lr(p, lr_dir, scale))
        hr = hr[: lr.shape[0] * scale, : lr.shape[1] * scale]
        if hr.shape[0] != lr.shape[0] * scale or hr.shape[1] != lr.shape[1] * scale:
            raise DataError(f"{p.name}: HR {hr.shape[:2]} is not {scale}x LR {lr.shape[:2]}")
        pairs.append(ImagePair(p.stem, to_chw(lr), to_chw(hr)))
    return pairs


def sample_patch(pair: ImagePair, p: int, scale: int, rng: np.random.Generator, augment=True) -> Optional[SamplePair]:
    """Uniform aligned crop plus one of 8 dihedral transforms applied to
    both patches. Returns None (with a warning) when the image is smaller
    than the patch."""
    _, h, w = pair.lr.shape
    if pair.hr.shape[1:] != (h * scale, w * scale):
        raise DataError(f"{pair.source_id}: HR {pair.hr.shape[1:]} is not {scale}x LR {(h, w)}")
    if h < p or w < p:
        logger.warning("skipping %s: LR size %dx%d smaller than patch %d", pair.source_id, w, h, p)
        return None
    x = int(rng.integers(0, w - p + 1))
    y = int(rng.integers(0, h - p + 1))
    code = int(rng.integers(0, 8)) if augment else 0
    lr = pair.lr[:, y:y + p, x:x + p]
    hp = p * scale
    hr = pair.hr[:, y * scale:y * scale + hp, x * scale:x * scale + hp]
    return SamplePair(dihedral(lr, code), dihedral(hr, code), pair.source_id, (x, y), code)


def sample_batch(pairs: List[ImagePair], batch_size: int, p: int, scale: int, rng: np.random.Generator,
                 augment=True, max_tries=100):
    lr, hr = [], []
    tries = 0
    while len(lr) < batch_size:
        tries += 1
        if tries > max_tries * batch_size:
            raise DataError(f"no image in the dataset is at least {p}x{p} in LR")
        pair = pairs[int(rng.integers(0, len(pairs)))]
        s = sample_patch(pair, p, scale, rng, augment)
        if s is None:
            continue
        lr.append(s.lr_patch)
        hr.append(s.hr_patch)
    return np.stack(lr), np.stack(hr)
