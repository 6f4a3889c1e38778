"""
Checkpoint Format (GDCK)
========================
    magic "GDCK" | u32 version | u64 len + JSON config snapshot
    | u32 entry count | entries (u32 name len, name, u64 offset, u8 rank, u32 dims...)
    | float32 parameters | float32 Adam exp_avg | float32 Adam exp_avg_sq | u32 epoch

All integers little-endian. The layout table lists parameters in
`named_parameters()` order; offsets index the flat float32 payload.

The JSON header is the TrainConfig dump itself. Resume state (Adam step,
scheduler) rides along under the reserved key `_resume`, which is not a
config field and is removed before validation.
"""

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from core.errors import FormatError

from ..models.config import TrainConfig, validated
from ..utils import logger
from .network import DeformationModel

MAGIC = b"GDCK"
VERSION = 1
RESUME_KEY = "_resume"


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    offset: int
    shape: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


@dataclass
class Checkpoint:
    config: TrainConfig
    layout: List[LayoutEntry]
    params: np.ndarray                  # float32 flat
    exp_avg: np.ndarray
    exp_avg_sq: np.ndarray
    epoch: int = 0
    step: int = 0
    scheduler: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def n_params(self) -> int:
        return int(self.params.shape[0])


def model_layout(model: DeformationModel) -> List[LayoutEntry]:
    layout, offset = [], 0
    for name, p in model.named_parameters():
        layout.append(LayoutEntry(name, offset, tuple(p.shape)))
        offset += p.numel()
    return layout


def _flat(tensors) -> np.ndarray:
    return parameters_to_vector([t.detach().to(torch.float32) for t in tensors]).cpu().numpy()


def capture(model: DeformationModel, optimizer=None, scheduler=None, epoch: int = 0) -> Checkpoint:
    """Snapshot model parameters and Adam moments (zeros before the first step)."""
    params = list(model.parameters())
    exp_avg = [torch.zeros_like(p) for p in params]
    exp_avg_sq = [torch.zeros_like(p) for p in params]
    step = 0
    if optimizer is not None:
        for i, p in enumerate(params):
            state = optimizer.state.get(p, {})
            if "exp_avg" in state:
                exp_avg[i] = state["exp_avg"]
                exp_avg_sq[i] = state["exp_avg_sq"]
                step = int(float(state["step"]))
    return Checkpoint(
        config=model.config,
        layout=model_layout(model),
        params=_flat(params),
        exp_avg=_flat(exp_avg),
        exp_avg_sq=_flat(exp_avg_sq),
        epoch=epoch,
        step=step,
        scheduler=scheduler.state_dict() if scheduler is not None else {},
    )


# ── Serialization ───────────────────────────────────────────────────

def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snapshot = ckpt.config.model_dump(mode="json")
    snapshot[RESUME_KEY] = {"step": ckpt.step, "scheduler": ckpt.scheduler}
    header = json.dumps(snapshot, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<Q", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(ckpt.layout)))
    for entry in ckpt.layout:
        name = entry.name.encode("utf-8")
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        buf.write(struct.pack("<QB", entry.offset, len(entry.shape)))
        buf.write(struct.pack(f"<{len(entry.shape)}I", *entry.shape))
    for payload in (ckpt.params, ckpt.exp_avg, ckpt.exp_avg_sq):
        buf.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())
    buf.write(struct.pack("<I", ckpt.epoch))
    path.write_bytes(buf.getvalue())
    logger.info(f"Checkpoint saved → {path} ({ckpt.n_params} params, epoch {ckpt.epoch})")
    return path


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a GDCK checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt checkpoint header: {e}") from e
    if not isinstance(header, dict):
        raise FormatError(f"{path}: checkpoint header is not a JSON object")
    resume = header.pop(RESUME_KEY, {})
    config = validated(TrainConfig, header)

    (count,) = r.unpack("<I")
    layout = []
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        offset, rank = r.unpack("<QB")
        shape = r.unpack(f"<{rank}I") if rank else ()
        layout.append(LayoutEntry(name, offset, tuple(shape)))
    total = sum(e.size for e in layout)

    payloads = [np.frombuffer(r.take(4 * total), dtype="<f4").astype(np.float32) for _ in range(3)]
    (epoch,) = r.unpack("<I")
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Checkpoint(
        config=config, layout=layout, params=payloads[0], exp_avg=payloads[1], exp_avg_sq=payloads[2],
        epoch=epoch, step=int(resume.get("step", 0)), scheduler=resume.get("scheduler", {}), version=version,
    )


# ── Restore ─────────────────────────────────────────────────────────

def _check_layout(ckpt: Checkpoint, model: DeformationModel) -> None:
    expected = model_layout(model)
    if [(e.name, e.shape) for e in expected] != [(e.name, e.shape) for e in ckpt.layout]:
        raise FormatError("Checkpoint layout does not match the model built from its config")


def load_parameters(ckpt: Checkpoint, model: DeformationModel) -> DeformationModel:
    """Copy the checkpoint payload into an existing model of the same layout."""
    _check_layout(ckpt, model)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        vector_to_parameters(torch.from_numpy(ckpt.params.copy()).to(dtype), model.parameters())
    return model


def build_model(ckpt: Checkpoint, dtype: torch.dtype = torch.float32) -> DeformationModel:
    """Model from the checkpoint's config, loaded with its parameters."""
    return load_parameters(ckpt, DeformationModel(ckpt.config).to(dtype))


def restore_optimizer(ckpt: Checkpoint, model: DeformationModel, optimizer: torch.optim.Optimizer) -> None:
    """Load Adam moments and the step counter into `optimizer`."""
    _check_layout(ckpt, model)
    if ckpt.step == 0:
        return
    for entry, p in zip(ckpt.layout, model.parameters()):
        sl = slice(entry.offset, entry.offset + entry.size)
        state = optimizer.state[p]
        state["step"] = torch.tensor(float(ckpt.step))
        state["exp_avg"] = torch.from_numpy(ckpt.exp_avg[sl].copy()).to(p.dtype).reshape(p.shape)
        state["exp_avg_sq"] = torch.from_numpy(ckpt.exp_avg_sq[sl].copy()).to(p.dtype).reshape(p.shape)


def checkpoint_params(ckpt: Checkpoint, name: str) -> Optional[np.ndarray]:
    """One named parameter from the flat payload."""
    for entry in ckpt.layout:
        if entry.name == name:
            return ckpt.params[entry.offset:entry.offset + entry.size].reshape(entry.shape)
    return None
