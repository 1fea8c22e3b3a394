"""Binary checkpoint format.

Layout (little-endian)::

    b"SLWSR1"
    u32 blob length, blob bytes (UTF-8 ``key = value`` text: the model
        config followed by ``state.*`` training counters)
    records until EOF:
        u32 name length, name bytes, u32 rank, rank * u32 dims,
        raw float32 values

Parameter records use the parameter name; optimizer moments are stored as
``adam.m:<name>`` and ``adam.v:<name>``.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .config import ModelConfig, parse_key_values
from .errors import ConfigurationError, DataError

MAGIC = b"SLWSR1"
M_PREFIX = "adam.m:"
V_PREFIX = "adam.v:"


class CheckpointError(ConfigurationError):
    """Malformed checkpoint or checkpoint/config mismatch."""


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Dict[str, np.ndarray]
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    state: Dict[str, str] = field(default_factory=dict)

    @property
    def num_parameters(self):
        return int(sum(a.size for a in self.params.values()))


def _record(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def encode(ckpt: Checkpoint) -> bytes:
    lines = [ckpt.config.to_text().rstrip("\n"), f"state.step = {ckpt.step}"]
    for key, value in ckpt.state.items():
        if "\n" in value or "#" in value:
            raise ValueError(f"state value for {key} may not contain newlines or '#'")
        lines.append(f"state.{key} = {value}")
    blob = ("\n".join(lines) + "\n").encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    for name, arr in ckpt.params.items():
        parts.append(_record(name, arr))
    for name, arr in ckpt.m.items():
        parts.append(_record(M_PREFIX + name, arr))
    for name, arr in ckpt.v.items():
        parts.append(_record(V_PREFIX + name, arr))
    return b"".join(parts)


def decode(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint: bad magic")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (blob_len,) = struct.unpack("<I", take(4))
    values = parse_key_values(take(blob_len).decode("utf-8"))
    state = {k[len("state."):]: v for k, v in values.items() if k.startswith("state.")}
    config = ModelConfig.from_dict({k: v for k, v in values.items() if not k.startswith("state.")})
    step = int(state.pop("step", 0))
    params, m, v = {}, {}, {}
    while pos < len(data):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        if name.startswith(M_PREFIX):
            m[name[len(M_PREFIX):]] = arr
        elif name.startswith(V_PREFIX):
            v[name[len(V_PREFIX):]] = arr
        else:
            params[name] = arr
    return Checkpoint(config, params, m, v, step, state)


def save(path, ckpt: Checkpoint):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(encode(ckpt))
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data)


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def from_model(model, optimizer=None, step=0, state: Optional[dict] = None) -> Checkpoint:
    m = v = {}
    if optimizer is not None:
        m = {k: a.copy() for k, a in optimizer.m.items()}
        v = {k: a.copy() for k, a in optimizer.v.items()}
    return Checkpoint(model.cfg, model.state_dict(), m, v, step, dict(state or {}))


def to_model(ckpt: Checkpoint, dtype=np.float32):
    from .model import build_model

    model = build_model(ckpt.config, dtype=dtype)
    try:
        model.load_state_dict(ckpt.params)
    except ConfigurationError as exc:
        raise CheckpointError(f"checkpoint does not match its config: {exc}") from exc
    return model


def rng_to_text(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, separators=(",", ":"))


def rng_from_text(text: str) -> np.random.Generator:
    state = json.loads(text)
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)
