"""Symmetric lightweight super-resolution network.

Layout (defaults): a 3x3 head conv, nine bunches of residual blocks, an
information pool concatenating six feature maps from the first five
bunches, a 0.5/0.5 fusion of pool and mirrored skip feeding each of the
last four bunches, a global residual from the head, and a sub-pixel tail.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig, tail_factors
from .errors import ConfigurationError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class LayerSpec:
    """A parameterised convolution; ``level`` is its spatial size in units
    of the LR input (1 for the body, up to ``scale`` in the tail)."""

    name: str
    kind: str  # "conv" or "depthwise"
    c_in: int
    c_out: int
    k: int
    level: int = 1

    @property
    def weight_shape(self):
        if self.kind == "depthwise":
            return (self.c_out, 1, self.k, self.k)
        return (self.c_out, self.c_in, self.k, self.k)

    @property
    def fan_in(self):
        return self.k * self.k * (1 if self.kind == "depthwise" else self.c_in)


@dataclass(frozen=True)
class BlockSpec:
    name: str
    kind: str  # "basic_residual" or "inverted_residual"
    channels: int
    activation: bool = True
    expansion: int = 2

    def layers(self) -> List[LayerSpec]:
        c = self.channels
        if self.kind == "basic_residual":
            return [LayerSpec(f"{self.name}.conv1", "conv", c, c, 3),
                    LayerSpec(f"{self.name}.conv2", "conv", c, c, 3)]
        mid = c * self.expansion
        return [LayerSpec(f"{self.name}.expand", "conv", c, mid, 1),
                LayerSpec(f"{self.name}.depthwise", "depthwise", mid, mid, 3),
                LayerSpec(f"{self.name}.project", "conv", mid, c, 1)]


def _weights(params, layer_name):
    return params[f"{layer_name}.weight"], params[f"{layer_name}.bias"]


def _conv(x, params, layer_name):
    w, b = _weights(params, layer_name)
    return T.conv2d(x, w, b, name=layer_name)


def basic_residual_block(x: Tensor, spec: BlockSpec, params, alpha: float = 1.0) -> Tensor:
    """F(x) + alpha * conv2(conv1(F(x))) with F = relu when the block keeps
    its activation, identity otherwise."""
    if x.shape[1] != spec.channels:
        raise ConfigurationError(f"{spec.name}: input has {x.shape[1]} channels, block expects {spec.channels}")
    f = T.relu(x, name=f"{spec.name}.act") if spec.activation else x
    branch = _conv(_conv(f, params, f"{spec.name}.conv1"), params, f"{spec.name}.conv2")
    return T.add_scaled(f, branch, alpha, name=spec.name)


def inverted_residual_block(x: Tensor, spec: BlockSpec, params) -> Tensor:
    """x + project(relu(depthwise(relu(expand(x))))); the projection stays linear."""
    if x.shape[1] != spec.channels:
        raise ConfigurationError(f"{spec.name}: input has {x.shape[1]} channels, block expects {spec.channels}")
    h = T.relu(_conv(x, params, f"{spec.name}.expand"))
    w, b = _weights(params, f"{spec.name}.depthwise")
    h = T.relu(T.depthwise_conv2d(h, w, b, name=f"{spec.name}.depthwise"))
    return T.add(x, _conv(h, params, f"{spec.name}.project"), name=spec.name)


def block_bunch(x: Tensor, blocks: Sequence[Callable[[Tensor], Tensor]]):
    """Local residual learning over one bunch of blocks.

    With three blocks R1, R2, R3: u = R1(x), out = R3(u + R2(u)). A two-block
    bunch skips the middle block (out = R3(u)); a single block returns u.
    Returns ``(out, taps)`` where taps holds ``u``, ``r2`` (if present) and
    ``out``.
    """
    if not 1 <= len(blocks) <= 3:
        raise ConfigurationError(f"a bunch holds 1 to 3 blocks, got {len(blocks)}")
    u = blocks[0](x)
    taps = {"u": u}
    if len(blocks) == 1:
        out = u
    elif len(blocks) == 2:
        out = blocks[1](u)
    else:
        r2 = blocks[1](u)
        taps["r2"] = r2
        out = blocks[2](T.add(u, r2))
    taps["out"] = out
    return out, taps


def information_pool(taps: Sequence[Tensor], reduce_w: Tensor, reduce_b: Tensor, expected: Optional[int] = 6,
                     name="pool") -> Tensor:
    """Concatenate the tapped maps and reduce them back to one width with a 1x1 conv."""
    if expected is not None and len(taps) != expected:
        raise ConfigurationError(f"information pool expects {expected} taps, got {len(taps)}")
    if reduce_w.shape[2:] != (1, 1):
        raise ConfigurationError(f"pool reduction must be 1x1, got {reduce_w.shape}")
    return T.conv2d(T.concat_channels(taps), reduce_w, reduce_b, pad=0, name=name)


def activation_flags(n_blocks: int, keep: str) -> List[bool]:
    """Which basic blocks keep their leading activation."""
    idx = range(n_blocks)
    if keep == "all":
        return [True] * n_blocks
    if keep == "rare":
        return [i in (0, n_blocks - 1) for i in idx]
    if keep == "third":
        return [i % 3 == 0 for i in idx]
    if keep == "half":
        return [i % 2 == 1 for i in idx]
    if keep == "two_thirds":
        return [i % 3 != 2 for i in idx]
    raise ConfigurationError(f"unknown activation_keep {keep!r}")


def block_positions(n_blocks_in_bunch: int):
    return {1: (1,), 2: (1, 3), 3: (1, 2, 3)}[n_blocks_in_bunch]


class Model:
    """A built network: parameter tensors plus the static layer plan."""

    def __init__(self, cfg: ModelConfig, params: Dict[str, Tensor], blocks: List[List[BlockSpec]],
                 layers: List[LayerSpec]):
        self.cfg = cfg
        self.params = params
        self.bunches = blocks
        self.layers = layers

    # ----------------------------------------------------------- parameters

    def named_parameters(self):
        return list(self.params.items())

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state, strict=True):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if strict and (missing or extra):
            raise ConfigurationError(f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for name, arr in state.items():
            if name not in self.params:
                continue
            p = self.params[name]
            arr = np.asarray(arr)
            if arr.shape != p.shape:
                raise ConfigurationError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    # --------------------------------------------------------------- forward

    def _run_block(self, spec: BlockSpec, params):
        if spec.kind == "basic_residual":
            return lambda x: basic_residual_block(x, spec, params, self.cfg.residual_scale)
        return lambda x: inverted_residual_block(x, spec, params)

    def _pool_taps(self, head, bunch_taps):
        cfg = self.cfg
        if cfg.pool_mode == "normal":
            return [head] + [bunch_taps[b]["u"] for b in range(1, 5)] + [bunch_taps[4]["r2"]]
        outputs = [head]
        for taps in bunch_taps:
            outputs.append(taps["u"])
            if "r2" in taps:
                outputs.append(taps["r2"])
            if taps["out"] is not taps["u"]:
                outputs.append(taps["out"])
        return outputs[:11]

    def forward(self, x, params=None) -> Tensor:
        """Map (N, C, h, w) LR input in [0, 1] to (N, C, scale*h, scale*w)."""
        cfg = self.cfg
        params = self.params if params is None else params
        if not isinstance(x, Tensor):
            x = Tensor(x, dtype=self.dtype)
        if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ConfigurationError(f"expected (N, {cfg.in_channels}, h, w) input, got {x.shape}")
        mean = np.asarray(cfg.rgb_mean)
        if cfg.normalize:
            x = T.add_channel_constant(x, -mean, name="sub_mean")
        head = _conv(x, params, "head")

        former_outs, bunch_taps = [], []
        feat = head
        for b, specs in enumerate(self.bunches[:cfg.n_former]):
            feat, taps = block_bunch(feat, [self._run_block(s, params) for s in specs])
            former_outs.append(feat)
            bunch_taps.append(taps)

        pool = None
        if cfg.pool_mode != "none":
            w, bias = _weights(params, "pool")
            taps = self._pool_taps(head, bunch_taps)
            pool = information_pool(taps, w, bias, expected=len(taps))

        for m, specs in enumerate(self.bunches[cfg.n_former:], start=1):
            mirror = former_outs[cfg.n_former - m]
            skip = mirror if m == 1 else T.add(feat, mirror, name=f"skip{cfg.n_former + m}")
            if pool is None:
                inp = skip
            else:
                inp = T.add_scaled(T.scale(pool, cfg.pool_weight), skip, cfg.skip_weight,
                                   name=f"fuse{cfg.n_former + m}")
            feat, _ = block_bunch(inp, [self._run_block(s, params) for s in specs])

        h = T.add(feat, head, name="global_residual")
        for i, r in enumerate(tail_factors(cfg.scale), start=1):
            h = T.pixel_shuffle(_conv(h, params, f"tail.up{i}"), r, name=f"tail.shuffle{i}")
        out = _conv(h, params, "tail.out")
        if cfg.normalize:
            out = T.add_channel_constant(out, mean, name="add_mean")
        if not np.isfinite(out.data).all():
            raise NumericError("non-finite network output after tail.out")
        return out

    __call__ = forward

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference without graph recording; accepts (N,C,h,w) or (C,h,w)."""
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        frozen = {k: Tensor(v.data, dtype=v.dtype) for k, v in self.params.items()}
        out = self.forward(Tensor(x, dtype=self.dtype), params=frozen).data
        return out[0] if single else out


# ------------------------------------------------------------------ builder


def plan(cfg: ModelConfig):
    """Static layer plan: (bunches of BlockSpecs, ordered LayerSpecs)."""
    beta = cfg.n_feats
    flags = activation_flags(cfg.n_blocks, cfg.activation_keep)
    compress = set(cfg.compress_set)
    bunches, idx = [], 0
    for b, count in enumerate(cfg.blocks_per_bunch, start=1):
        specs = []
        for pos in block_positions(count):
            kind = "inverted_residual" if idx in compress else "basic_residual"
            specs.append(BlockSpec(f"bunch{b}.block{pos}", kind, beta, flags[idx], cfg.expansion))
            idx += 1
        bunches.append(specs)

    layers = [LayerSpec("head", "conv", cfg.in_channels, beta, 3)]
    for specs in bunches:
        for spec in specs:
            layers.extend(spec.layers())
    if cfg.pool_mode != "none":
        n_taps = 6 if cfg.pool_mode == "normal" else 11
        layers.append(LayerSpec("pool", "conv", n_taps * beta, beta, 1))
    level = 1
    for i, r in enumerate(tail_factors(cfg.scale), start=1):
        layers.append(LayerSpec(f"tail.up{i}", "conv", beta, beta * r * r, 3, level))
        level *= r
    layers.append(LayerSpec("tail.out", "conv", beta, cfg.out_channels, 3, level))
    return bunches, layers


def init_params(layers: Sequence[LayerSpec], rng: np.random.Generator, dtype=np.float32):
    """Kaiming-uniform fan-in weights (bound 1/sqrt(fan_in), the a=sqrt(5)
    leaky parameterisation) and zero biases."""
    params = {}
    for layer in layers:
        bound = 1.0 / np.sqrt(layer.fan_in)
        w = rng.uniform(-bound, bound, size=layer.weight_shape).astype(dtype)
        params[f"{layer.name}.weight"] = Tensor(w, requires_grad=True, name=f"{layer.name}.weight")
        params[f"{layer.name}.bias"] = Tensor(np.zeros(layer.c_out, dtype), requires_grad=True,
                                              name=f"{layer.name}.bias")
    return params


def build_model(cfg: Optional[ModelConfig] = None, seed=0, dtype=np.float32) -> Model:
    cfg = ModelConfig() if cfg is None else cfg
    cfg.validate()
    bunches, layers = plan(cfg)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Model(cfg, init_params(layers, rng, dtype), bunches, layers)
