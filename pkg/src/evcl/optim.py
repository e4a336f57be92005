"""First-order optimizers and binary parameter checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter

CHECKPOINT_MAGIC = b"EVCK"


class CheckpointError(ValueError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params) -> None:
    """One Adam update from the gradients currently held by `params`.

    Moment buffers are keyed by parameter id, so the same state can be
    reused across tapes. A parameter with an all-zero gradient still gets
    its moments decayed, as usual.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p in params:
        m = state.m.get(p.id)
        if m is None:
            m = state.m[p.id] = np.zeros_like(p.value)
            state.v[p.id] = np.zeros_like(p.value)
        v = state.v[p.id]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(params, lr: float) -> None:
    for p in params:
        p.value -= lr * p.grad


def save_checkpoint(params) -> bytes:
    """Serialize parameters: per record u32 id, u32 rank, u32 extents, f64 data."""
    out = [CHECKPOINT_MAGIC]
    seen = set()
    for p in params:
        if p.id in seen:
            raise CheckpointError(f"duplicate parameter id {p.id}")
        seen.add(p.id)
        shape = p.value.shape
        out.append(struct.pack(f"<II{len(shape)}I", p.id, len(shape), *shape))
        out.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return b"".join(out)


def load_checkpoint(data: bytes, params) -> None:
    """Restore `params` in place from bytes produced by save_checkpoint.

    Every record must name a known parameter id with a matching shape, and
    every parameter must be covered exactly once.
    """
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    by_id = {}
    for p in params:
        if p.id in by_id:
            raise CheckpointError(f"duplicate parameter id {p.id}")
        by_id[p.id] = p
    pos = 4
    restored = set()

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint reading {what} at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        pid, rank = struct.unpack("<II", take(8, "record header"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "shape"))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(8 * count, "values"), dtype="<f8").reshape(shape)
        p = by_id.get(pid)
        if p is None:
            raise CheckpointError(f"unknown parameter id {pid}")
        if pid in restored:
            raise CheckpointError(f"parameter id {pid} appears twice")
        if p.value.shape != shape:
            raise CheckpointError(
                f"parameter {pid} has shape {p.value.shape}, checkpoint has {shape}"
            )
        p.value[...] = values
        restored.add(pid)
    missing = set(by_id) - restored
    if missing:
        raise CheckpointError(f"checkpoint missing parameter ids {sorted(missing)}")


def save_checkpoint_file(path, params) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(params))


def load_checkpoint_file(path, params) -> None:
    with open(path, "rb") as fh:
        load_checkpoint(fh.read(), params)
