"""Benchmark pipeline: LR synthesis, super-resolution, Y-channel PSNR/SSIM."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .imaging import (bicubic_resize, dihedral, dihedral_inverse, list_images, load_image, modcrop, quantize,
                      rgb_to_y, save_png, to_chw, to_hwc_u8)
from .errors import DataError
from .metrics import psnr, ssim, shave_border

logger = logging.getLogger(__name__)


def _as_fn(model):
    return model.predict if hasattr(model, "predict") else model


def self_ensemble(model, lr: np.ndarray) -> np.ndarray:
    """Average of the model over the 8 flips/rotations of ``lr``, each
    output mapped back by the inverse transform."""
    fn = _as_fn(model)
    acc = None
    for code in range(8):
        out = dihedral_inverse(fn(dihedral(lr, code)), code)
        acc = out.astype(np.float64) if acc is None else acc + out
    return (acc / 8.0).astype(np.asarray(lr).dtype)


def bicubic_upscaler(scale, edge="clamp"):
    """A model-like callable upscaling float CHW/NCHW data in [0, 1]."""
    def run(lr):
        lr = np.asarray(lr)
        moved = np.moveaxis(lr, (-2, -1), (0, 1))
        out = bicubic_resize(moved, scale, edge=edge)
        return np.moveaxis(out, (0, 1), (-2, -1))
    return run


@dataclass
class ImageScore:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    dataset: str
    model_id: str
    scale: int
    ensemble: bool
    images: List[ImageScore] = field(default_factory=list)

    @property
    def mean_psnr(self):
        return float(np.mean([s.psnr for s in self.images])) if self.images else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean([s.ssim for s in self.images])) if self.images else float("nan")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "model", "scale", "ensemble", "image", "psnr", "ssim"])
        for s in self.images:
            w.writerow([self.dataset, self.model_id, self.scale, int(self.ensemble), s.name,
                        f"{s.psnr:.4f}", f"{s.ssim:.6f}"])
        w.writerow([self.dataset, self.model_id, self.scale, int(self.ensemble), "mean",
                    f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.6f}"])
        return buf.getvalue()

    def table(self):
        width = max([len(s.name) for s in self.images] + [4])
        tag = "+" if self.ensemble else ""
        lines = [f"{self.dataset} x{self.scale}  {self.model_id}{tag}",
                 f"{'image':<{width}}  {'PSNR':>8}  {'SSIM':>7}"]
        lines += [f"{s.name:<{width}}  {s.psnr:>8.2f}  {s.ssim:>7.4f}" for s in self.images]
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>8.2f}  {self.mean_ssim:>7.4f}")
        return "\n".join(lines)


def make_lr(hr_u8: np.ndarray, scale: int, edge="clamp") -> np.ndarray:
    """Bicubic downscale of a uint8 HWC image, re-quantised to uint8."""
    return quantize(bicubic_resize(hr_u8, 1.0 / scale, edge=edge))


def score_pair(sr_u8, hr_u8, scale):
    """Y-channel PSNR and SSIM of two uint8 HWC images, ``scale`` border shaved."""
    y_sr = rgb_to_y(sr_u8, channel_axis=-1)[..., 0]
    y_hr = rgb_to_y(hr_u8, channel_axis=-1)[..., 0]
    return (psnr(y_sr, y_hr, shave=scale),
            ssim(shave_border(y_sr, scale), shave_border(y_hr, scale)))


def super_resolve(model, lr_u8: np.ndarray, ensemble=False) -> np.ndarray:
    """Run a model on a uint8 HWC image; returns the quantised uint8 result."""
    lr = to_chw(lr_u8)
    sr = self_ensemble(model, lr) if ensemble else _as_fn(model)(lr)
    return to_hwc_u8(sr)


def evaluate_images(model, hr_images, scale, lr_images=None, ensemble=False, names=None, dataset="custom",
                    model_id="model", jobs=1, edge="clamp", save_dir=None) -> EvalReport:
    """Score ``model`` on HR images (uint8 HWC). LR inputs are synthesised
    by bicubic downscaling unless given."""
    names = names or [f"img{i:03d}" for i in range(len(hr_images))]

    def one(i):
        hr = modcrop(hr_images[i], scale)
        lr = lr_images[i] if lr_images is not None else make_lr(hr, scale, edge)
        sr = super_resolve(model, lr, ensemble)
        if sr.shape != hr.shape:
            sr = sr[: hr.shape[0], : hr.shape[1]]
        if save_dir is not None:
            save_png(Path(save_dir) / f"{names[i]}.png", sr)
        p, s = score_pair(sr, hr, scale)
        return ImageScore(names[i], p, s)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            scores = list(pool.map(one, range(len(hr_images))))
    else:
        scores = [one(i) for i in range(len(hr_images))]
    return EvalReport(dataset, model_id, scale, ensemble, scores)


def evaluate_dataset(model, hr_dir, scale, lr_dir=None, ensemble=False, dataset=None, model_id="model",
                     jobs=1, edge="clamp", save_dir=None) -> EvalReport:
    paths = list_images(hr_dir)
    hr = [load_image(p) for p in paths]
    lr = None
    if lr_dir is not None:
        lr = [load_image(find_lr(p, lr_dir, scale)) for p in paths]
    return evaluate_images(model, hr, scale, lr, ensemble, [p.stem for p in paths],
                           dataset or Path(hr_dir).name, model_id, jobs, edge, save_dir)


def find_lr(hr_path, lr_dir, scale):
    """Match ``name.png`` to ``name.png`` or ``namex4.png`` in ``lr_dir``."""
    hr_path, lr_dir = Path(hr_path), Path(lr_dir)
    for candidate in (lr_dir / hr_path.name, lr_dir / f"{hr_path.stem}x{scale}{hr_path.suffix}"):
        if candidate.exists():
            return candidate
    raise DataError(f"no LR image for {hr_path.name} in {lr_dir}")


def comparison_strip(crops, gap=4):
    """Lay uint8 HWC crops side by side (figure-style comparison)."""
    h = max(c.shape[0] for c in crops)
    total_w = sum(c.shape[1] for c in crops) + gap * (len(crops) - 1)
    canvas = np.full((h, total_w, 3), 255, np.uint8)
    x = 0
    for c in crops:
        canvas[: c.shape[0], x:x + c.shape[1]] = c
        x += c.shape[1] + gap
    return canvas
