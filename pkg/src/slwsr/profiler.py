"""Static parameter and multiply-accumulate accounting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

from .config import ModelConfig
from .model import LayerSpec, Model, plan

REFERENCE_HR = (1280, 720)  # (width, height) of the HR output


def count_params(layer: LayerSpec) -> int:
    """k * k * C_in * C_out + C_out; a depthwise layer has one input per kernel."""
    c_in = 1 if layer.kind == "depthwise" else layer.c_in
    return layer.k * layer.k * c_in * layer.c_out + layer.c_out


def count_multiadds(layer: LayerSpec, out_h: int, out_w: int) -> int:
    """Multiply-accumulates of one layer at the given output size (bias excluded)."""
    return (count_params(layer) - layer.c_out) * out_h * out_w


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    multi_adds: int
    out_h: int
    out_w: int


@dataclass
class CostReport:
    label: str
    rows: List[LayerCost]
    reference: Tuple[int, int]
    params: int = field(init=False)
    multi_adds: int = field(init=False)

    def __post_init__(self):
        self.params = sum(r.params for r in self.rows)
        self.multi_adds = sum(r.multi_adds for r in self.rows)

    def subtotal(self, prefix):
        rows = [r for r in self.rows if r.name.startswith(prefix)]
        return sum(r.params for r in rows), sum(r.multi_adds for r in rows)

    def table(self):
        width = max(len(r.name) for r in self.rows)
        lines = [f"{'layer':<{width}}  {'kind':<9}  {'params':>9}  {'multi-adds':>14}  size"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.kind:<9}  {r.params:>9d}  {r.multi_adds:>14d}  {r.out_w}x{r.out_h}")
        lines.append(f"{'total':<{width}}  {'':<9}  {self.params:>9d}  {self.multi_adds:>14d}  "
                     f"(HR {self.reference[0]}x{self.reference[1]})")
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "kind", "params", "multi_adds", "out_w", "out_h"])
        for r in self.rows:
            w.writerow([r.name, r.kind, r.params, r.multi_adds, r.out_w, r.out_h])
        w.writerow(["total", "", self.params, self.multi_adds, self.reference[0], self.reference[1]])
        return buf.getvalue()


def profile(target, reference=REFERENCE_HR, label=None) -> CostReport:
    """Cost report for a :class:`ModelConfig` or built :class:`Model`.

    ``reference`` is the HR output size (width, height); body layers run at
    HR/scale and tail layers at their own sub-pixel level.
    """
    cfg = target.cfg if isinstance(target, Model) else target
    layers = target.layers if isinstance(target, Model) else plan(cfg)[1]
    hr_w, hr_h = reference
    lr_w, lr_h = hr_w / cfg.scale, hr_h / cfg.scale
    rows = []
    for layer in layers:
        h, w = int(round(lr_h * layer.level)), int(round(lr_w * layer.level))
        rows.append(LayerCost(layer.name, layer.kind, count_params(layer), count_multiadds(layer, h, w), h, w))
    return CostReport(label or describe(cfg), rows, (hr_w, hr_h))


def describe(cfg: ModelConfig):
    n_inv = len(cfg.compress_set)
    extra = f", {n_inv} inverted (t={cfg.expansion})" if n_inv else ""
    return f"beta={cfg.n_feats}, {cfg.n_blocks - n_inv} basic{extra}, pool={cfg.pool_mode}"


def variant_configs():
    """Baseline, depth-reduced and width-reduced variants.

    The depth variant keeps six basic blocks (the first block of bunches
    1-6) and turns every other block slot into an inverted residual.
    """
    base = ModelConfig(n_feats=32)
    keep = {0, 3, 6, 9, 12, 15}
    depth = base.replace(compress_set=tuple(i for i in range(base.n_blocks) if i not in keep))
    width = ModelConfig(n_feats=16)
    return [("baseline", base), ("depth", depth), ("width", width)]


def cost_sweep(configs: Iterable, reference=REFERENCE_HR) -> List[CostReport]:
    reports = []
    for item in configs:
        label, cfg = item if isinstance(item, tuple) else (None, item)
        reports.append(profile(cfg, reference, label))
    return reports


def sweep_table(reports: Sequence[CostReport]):
    width = max(len(r.label) for r in reports)
    lines = [f"{'model':<{width}}  {'params (K)':>10}  {'multi-adds (G)':>14}"]
    for r in reports:
        lines.append(f"{r.label:<{width}}  {r.params / 1e3:>10.1f}  {r.multi_adds / 1e9:>14.2f}")
    return "\n".join(lines)


def sweep_csv(reports: Sequence[CostReport]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "params", "multi_adds", "hr_w", "hr_h"])
    for r in reports:
        w.writerow([r.label, r.params, r.multi_adds, r.reference[0], r.reference[1]])
    return buf.getvalue()
