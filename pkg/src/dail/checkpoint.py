"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DAILCKPT"                 magic
    u8                          format version (1)
    u64 + bytes                 metadata, UTF-8 JSON
    u32                         array count
    per array:
        u32 + bytes             name, UTF-8
        u32                     number of dims
        u64 * ndim              dims
        f64 * prod(dims)        row-major data
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .losses import MarginSpec
from .model import ModelParams
from .numerics import Prng
from .trainer import TrainConfig, TrainState

MAGIC = b"DAILCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = VERSION


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<Q", len(meta)), meta]
    parts.append(struct.pack("<I", len(ckpt.arrays)))
    for name, arr in ckpt.arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("unexpected end of checkpoint file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; this build reads version {VERSION}")
    (meta_len,) = r.unpack("<Q")
    metadata = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last array")
    return Checkpoint(arrays, metadata, version)


def state_to_checkpoint(state, config, extra: dict | None = None) -> Checkpoint:
    """Pack a trainer state (params, momentum buffers, step, PRNG) with its config."""
    arrays = dict(state.params.named_arrays())
    arrays.update({f"momentum.{k}": v for k, v in state.buffers.items()})
    cfg = asdict(config)
    cfg["lr_decay_steps"] = list(config.lr_decay_steps)
    cfg["hidden"] = list(config.hidden)
    meta = {
        "step": state.step,
        "seed": config.seed,
        "loss_mode": config.loss_mode,
        "margin": asdict(config.margin),
        "train_config": cfg,
        "num_embed_layers": len(state.params.embed_layers),
        "prng_algorithm": state.prng.algorithm,
        "prng_state": state.prng.get_state(),
    }
    meta.update(extra or {})
    return Checkpoint(arrays, meta)


def state_from_checkpoint(ckpt: Checkpoint):
    """Inverse of :func:`state_to_checkpoint`; returns ``(TrainState, TrainConfig)``."""
    meta = ckpt.metadata
    cfg = dict(meta["train_config"])
    cfg["margin"] = MarginSpec(**meta["margin"])
    cfg["lr_decay_steps"] = tuple(cfg["lr_decay_steps"])
    cfg["hidden"] = tuple(cfg["hidden"])
    config = TrainConfig(**cfg)
    params_arrays = {k: v for k, v in ckpt.arrays.items() if not k.startswith("momentum.")}
    n = meta["num_embed_layers"]
    params = ModelParams(
        embed_layers=[(params_arrays[f"embed.{i}.w"], params_arrays[f"embed.{i}.b"]) for i in range(n)],
        class_w=params_arrays["class.w"],
        class_b=params_arrays.get("class.b"),
        domain_w=params_arrays.get("domain.w"),
        domain_b=params_arrays.get("domain.b"),
        margin=config.margin,
        lam=config.lam,
    )
    buffers = {k[len("momentum."):]: v for k, v in ckpt.arrays.items() if k.startswith("momentum.")}
    prng = Prng((config.seed, 2))
    prng.set_state(meta["prng_state"])
    return TrainState(params, buffers, int(meta["step"]), prng), config
