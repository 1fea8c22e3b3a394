"""Patch-based L1 training with ADAM and step-halving learning rate."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import checkpoint as ckpt_io
from . import tensor as T
from .data import ImagePair, sample_batch
from .errors import DataError, NumericError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halving_period: int = 200  # epochs
    steps_per_epoch: int = 1000
    batch_size: int = 16
    patch: int = 48
    seed: int = 0
    augment: bool = True
    grad_clip: float = 0.0  # global-norm clip, 0 disables
    checkpoint_every: int = 0  # epochs, 0 disables periodic checkpoints

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps", "halving_period", "steps_per_epoch", "batch_size", "patch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise ValueError("ADAM betas must be < 1")


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Base rate halved once per ``halving_period`` completed epochs."""
    return cfg.lr * 0.5 ** (epoch // cfg.halving_period)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state, t: int, cfg: TrainConfig,
              lr: float):
    """Bias-corrected ADAM update in place.

    ``state`` holds dicts ``m`` and ``v`` keyed like ``params``; missing
    entries start at zero. Raises :class:`NumericError` naming the first
    parameter with a non-finite gradient, before anything is modified.
    """
    if t < 1:
        raise ValueError("ADAM step counter starts at 1")
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            v = state.v[name] = np.zeros_like(p)
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


class Adam:
    def __init__(self, params: Dict[str, T.Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, lr):
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step({k: p.data for k, p in self.params.items()}, grads, self, self.t + 1, self.cfg, lr)
        self.t += 1

    def load(self, m, v, t):
        self.m = {k: np.array(a, dtype=self.params[k].dtype) for k, a in m.items()}
        self.v = {k: np.array(a, dtype=self.params[k].dtype) for k, a in v.items()}
        self.t = t


def clip_grad_norm(params, max_norm):
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if total > max_norm > 0:
        for g in grads:
            g *= max_norm / (total + 1e-12)
    return total


class CsvLog:
    """``step,epoch,lr,loss`` rows, flushed per write."""

    def __init__(self, path, append=False):
        self.path = Path(path)
        new = not (append and self.path.exists())
        self._fh = open(self.path, "a" if append else "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        if new:
            self._w.writerow(["step", "epoch", "lr", "loss"])

    def write(self, step, epoch, lr, loss):
        self._w.writerow([step, epoch, repr(lr), repr(loss)])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TrainState:
    step: int
    rng: np.random.Generator
    optimizer: Adam
    losses: List[float] = field(default_factory=list)

    @property
    def epoch(self):
        return self.step // self.optimizer.cfg.steps_per_epoch

    def to_checkpoint(self, model):
        return ckpt_io.from_model(model, self.optimizer, self.step, {"rng": ckpt_io.rng_to_text(self.rng)})


def new_state(model, cfg: TrainConfig) -> TrainState:
    return TrainState(0, np.random.default_rng(cfg.seed), Adam(model.params, cfg))


def resume_state(model, cfg: TrainConfig, ck: ckpt_io.Checkpoint) -> TrainState:
    model.load_state_dict(ck.params)
    opt = Adam(model.params, cfg)
    opt.load(ck.m, ck.v, ck.step)
    rng = ckpt_io.rng_from_text(ck.state["rng"]) if "rng" in ck.state else np.random.default_rng(cfg.seed)
    return TrainState(ck.step, rng, opt)


def train_step(model, state: TrainState, pairs: List[ImagePair], cfg: TrainConfig) -> float:
    epoch = state.epoch
    lr = learning_rate(cfg, epoch)
    lr_batch, hr_batch = sample_batch(pairs, cfg.batch_size, cfg.patch, model.cfg.scale, state.rng, cfg.augment)
    model.zero_grad()
    out = model(T.Tensor(lr_batch, dtype=model.dtype))
    loss = T.l1_loss(out, T.Tensor(hr_batch, dtype=model.dtype))
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss at step {state.step + 1}")
    loss.backward()
    if cfg.grad_clip > 0:
        clip_grad_norm(model.parameters(), cfg.grad_clip)
    state.optimizer.step(lr)
    state.step += 1
    state.losses.append(value)
    return value


def train_loop(model, pairs: List[ImagePair], cfg: TrainConfig, steps: int, state: Optional[TrainState] = None,
               log: Optional[CsvLog] = None, on_checkpoint: Optional[Callable] = None) -> TrainState:
    """Run ``steps`` optimisation steps.

    ``on_checkpoint(state)`` fires every ``cfg.checkpoint_every`` epochs and
    once at the end. Deterministic for a fixed seed on one thread.
    """
    if not pairs:
        raise DataError("training dataset is empty")
    state = new_state(model, cfg) if state is None else state
    period = cfg.checkpoint_every * cfg.steps_per_epoch
    for _ in range(steps):
        epoch = state.epoch
        lr = learning_rate(cfg, epoch)
        loss = train_step(model, state, pairs, cfg)
        if log is not None:
            log.write(state.step, epoch, lr, loss)
        if state.step % 50 == 0:
            logger.info("step %d epoch %d lr %.3g loss %.5f", state.step, epoch, lr, loss)
        if period and state.step % period == 0 and on_checkpoint is not None:
            on_checkpoint(state)
    if on_checkpoint is not None and not (period and state.step % period == 0):
        on_checkpoint(state)
    return state
