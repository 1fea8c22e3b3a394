"""Finite-difference verification of every differentiable operation.

Each case builds a scalar objective ``sum(f(inputs) * R)`` from float64
leaves, with ``R`` a fixed random projection, and compares the analytic
gradient of every leaf against central differences. The error reported
per leaf is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigurationError
from .model import BlockSpec, basic_residual_block, block_bunch, build_model, information_pool, inverted_residual_block
from .tensor import Tensor

EPS = 1e-5
TOLERANCE = 1e-4


@dataclass
class CaseResult:
    op: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < TOLERANCE)


def _randn(rng, *shape, avoid_zero=False):
    a = rng.standard_normal(shape)
    if avoid_zero:
        # keep ReLU arguments away from the kink so central differences stay valid
        a = np.where(np.abs(a) < 0.05, np.sign(a) * 0.05 + a, a)
    return a


def _leaf(arr, name):
    return Tensor(np.asarray(arr, np.float64), requires_grad=True, dtype=np.float64, name=name)


def _objective(fn, leaves, proj):
    out = fn(*leaves)
    if out.data.size == 1 and proj is None:
        return out
    return T.sum_all(T.mul(out, Tensor(proj, dtype=np.float64)))


def check(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], rng: np.random.Generator,
          eps=EPS, sample: Optional[int] = None, scalar_output=False) -> float:
    """Largest per-leaf relative error between backward() and central
    differences. ``sample`` limits the check to that many random
    coordinates per leaf."""
    leaves = [_leaf(a, f"in{i}") for i, a in enumerate(arrays)]
    probe = fn(*[Tensor(a, dtype=np.float64) for a in arrays])
    proj = None if scalar_output else rng.standard_normal(probe.shape)
    loss = _objective(fn, leaves, proj)
    loss.backward()

    worst = 0.0
    frozen = [Tensor(np.array(a, np.float64), dtype=np.float64) for a in arrays]
    for leaf, probe_in in zip(leaves, frozen):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = probe_in.data.reshape(-1)
        if sample is not None and sample < flat.size:
            coords = rng.choice(flat.size, size=sample, replace=False)
        else:
            coords = np.arange(flat.size)
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            plus = _objective(fn, frozen, proj).item()
            flat[c] = orig - eps
            minus = _objective(fn, frozen, proj).item()
            flat[c] = orig
            numeric[j] = (plus - minus) / (2 * eps)
        a = analytic.reshape(-1)[coords]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.abs(a - numeric).max() / scale))
    return worst


# ------------------------------------------------------------------ suites


def _conv_case(k, stride, pad, bias=True):
    def run(rng):
        x = _randn(rng, 2, 3, 6, 5)
        w = _randn(rng, 4, 3, k, k)
        arrays = [x, w] + ([_randn(rng, 4)] if bias else [])
        return check(lambda x, w, *b: T.conv2d(x, w, b[0] if b else None, stride=stride, pad=pad), arrays, rng)
    return run


def _depthwise(rng):
    arrays = [_randn(rng, 2, 3, 5, 6), _randn(rng, 3, 1, 3, 3), _randn(rng, 3)]
    return check(T.depthwise_conv2d, arrays, rng)


def _relu(rng):
    return check(T.relu, [_randn(rng, 2, 3, 4, 4, avoid_zero=True)], rng)


def _pixel_shuffle(rng):
    return check(lambda x: T.pixel_shuffle(x, 2), [_randn(rng, 2, 8, 3, 2)], rng)


def _pixel_unshuffle(rng):
    return check(lambda x: T.pixel_unshuffle(x, 2), [_randn(rng, 2, 2, 4, 6)], rng)


def _concat(rng):
    arrays = [_randn(rng, 2, c, 3, 3) for c in (1, 3, 2)]
    return check(lambda *xs: T.concat_channels(xs), arrays, rng)


def _slice(rng):
    return check(lambda x: T.slice_channels(x, 1, 4), [_randn(rng, 2, 5, 3, 3)], rng)


def _add_scaled(rng):
    return check(lambda a, b: T.add_scaled(a, b, 0.3), [_randn(rng, 2, 3, 3, 3), _randn(rng, 2, 3, 3, 3)], rng)


def _add(rng):
    return check(T.add, [_randn(rng, 2, 3, 3, 3), _randn(rng, 2, 3, 3, 3)], rng)


def _scale(rng):
    return check(lambda x: T.scale(x, -1.7), [_randn(rng, 2, 3, 3, 3)], rng)


def _channel_constant(rng):
    return check(lambda x: T.add_channel_constant(x, [0.4, -0.2, 0.1]), [_randn(rng, 2, 3, 3, 3)], rng)


def _mul(rng):
    return check(T.mul, [_randn(rng, 2, 3, 3, 3), _randn(rng, 2, 3, 3, 3)], rng)


def _sum(rng):
    return check(T.sum_all, [_randn(rng, 2, 3, 3, 3)], rng, scalar_output=True)


def _mean(rng):
    return check(T.mean_all, [_randn(rng, 2, 3, 3, 3)], rng, scalar_output=True)


def _l1(rng):
    # differences kept away from zero, where |.| has its kink
    pred = _randn(rng, 2, 3, 3, 3)
    target = pred + _randn(rng, 2, 3, 3, 3, avoid_zero=True)
    return check(T.l1_loss, [pred, target], rng, scalar_output=True)


def _block_params(spec: BlockSpec, rng):
    names, arrays = [], []
    for layer in spec.layers():
        bound = 1.0 / np.sqrt(layer.fan_in)
        names += [f"{layer.name}.weight", f"{layer.name}.bias"]
        arrays += [rng.uniform(-bound, bound, layer.weight_shape), 0.1 * rng.standard_normal(layer.c_out)]
    return names, arrays


def _block_fn(spec, names, alpha=0.5):
    def fn(x, *ps):
        params = dict(zip(names, ps))
        if spec.kind == "basic_residual":
            return basic_residual_block(x, spec, params, alpha)
        return inverted_residual_block(x, spec, params)
    return fn


def _basic_block(rng):
    spec = BlockSpec("blk", "basic_residual", 3, activation=True)
    names, arrays = _block_params(spec, rng)
    return check(_block_fn(spec, names), [_randn(rng, 1, 3, 5, 5)] + arrays, rng)


def _inverted_block(rng):
    spec = BlockSpec("blk", "inverted_residual", 3, expansion=2)
    names, arrays = _block_params(spec, rng)
    return check(_block_fn(spec, names), [_randn(rng, 1, 3, 5, 5)] + arrays, rng)


def _bunch(rng):
    specs = [BlockSpec("b1", "basic_residual", 3, activation=False),
             BlockSpec("b2", "basic_residual", 3, activation=True),
             BlockSpec("b3", "inverted_residual", 3)]
    groups = [_block_params(s, rng) for s in specs]
    sizes = [len(a) for _, a in groups]

    def fn(x, *ps):
        fns, start = [], 0
        for spec, (names, _), n in zip(specs, groups, sizes):
            fns.append(_bound(spec, names, ps[start:start + n]))
            start += n
        return block_bunch(x, fns)[0]

    arrays = [_randn(rng, 1, 3, 4, 4)] + [a for _, arrs in groups for a in arrs]
    return check(fn, arrays, rng)


def _bound(spec, names, ps):
    fn = _block_fn(spec, names)
    return lambda x: fn(x, *ps)


def _pool(rng):
    taps = [_randn(rng, 1, 2, 4, 3) for _ in range(6)]
    w = _randn(rng, 2, 12, 1, 1)
    b = _randn(rng, 2)
    return check(lambda *a: information_pool(a[:6], a[6], a[7]), taps + [w, b], rng)


def _model(rng):
    cfg = ModelConfig(n_feats=4, scale=2, residual_scale=0.5)
    model = build_model(cfg, seed=rng, dtype=np.float64)
    names = list(model.params)
    arrays = [rng.uniform(0.0, 1.0, (1, 3, 4, 4))] + [model.params[n].data.copy() for n in names]
    for n, a in zip(names, arrays[1:]):
        if n.endswith(".bias"):
            a += 0.05 * rng.standard_normal(a.shape)

    def fn(x, *ps):
        return model.forward(x, params=dict(zip(names, ps)))

    return check(fn, arrays, rng, sample=20)


CASES: Dict[str, Callable[[np.random.Generator], float]] = {
    "conv2d": _conv_case(3, 1, 1),
    "conv2d_stride2": _conv_case(3, 2, 1),
    "conv2d_1x1": _conv_case(1, 1, 0),
    "conv2d_nobias": _conv_case(3, 1, 0, bias=False),
    "depthwise_conv2d": _depthwise,
    "relu": _relu,
    "pixel_shuffle": _pixel_shuffle,
    "pixel_unshuffle": _pixel_unshuffle,
    "concat_channels": _concat,
    "slice_channels": _slice,
    "add_scaled": _add_scaled,
    "add": _add,
    "scale": _scale,
    "add_channel_constant": _channel_constant,
    "mul": _mul,
    "sum_all": _sum,
    "mean_all": _mean,
    "l1_loss": _l1,
    "basic_residual_block": _basic_block,
    "inverted_residual_block": _inverted_block,
    "block_bunch": _bunch,
    "information_pool": _pool,
    "model": _model,
}


def select(ops: Optional[Sequence[str]] = None) -> List[str]:
    """Resolve an ``--op`` filter. A name also selects its variants
    (``conv2d`` runs ``conv2d_stride2`` and friends)."""
    if not ops:
        return list(CASES)
    chosen = []
    for op in ops:
        hits = [name for name in CASES if name == op or name.startswith(op + "_")]
        if not hits:
            raise ConfigurationError(f"unknown gradcheck op {op!r}; choose from {', '.join(CASES)}")
        chosen += [h for h in hits if h not in chosen]
    return chosen


def run(ops: Optional[Sequence[str]] = None, seed=0) -> List[CaseResult]:
    results = []
    for name in select(ops):
        # per-case streams so a filtered run sees the same data as a full one
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        start = time.perf_counter()
        err = CASES[name](rng)
        results.append(CaseResult(name, err, time.perf_counter() - start))
    return results
