"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"TDMCKPT1"
    u32 header length, then UTF-8 JSON header
        {"format_version", "model", "vocab", ...extra metadata}
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
                prod(dims) little-endian float64 values

The header is written with sorted keys so identical state gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .denoiser import DenoiserConfig, TextPoseDenoiser, Vocabulary, param_shapes
from .tensor import Tensor

MAGIC = b"TDMCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: DenoiserConfig
    vocab: Vocabulary
    params: Dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    def model(self) -> TextPoseDenoiser:
        sched_T = int(self.meta.get("schedule", {}).get("T", 1000))
        params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return TextPoseDenoiser(self.config, params, self.vocab, sched_T)


def save_checkpoint(path, model: TextPoseDenoiser, meta: Mapping = None,
                    extra: Mapping[str, np.ndarray] = None) -> Path:
    path = Path(path)
    header = dict(meta or {})
    header.update(format_version=FORMAT_VERSION, model=model.cfg.to_dict(), vocab=model.vocab.tokens)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = [(name, t.data) for name, t in model.params.items()]
    tensors += sorted((extra or {}).items())
    parts = [MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(b"".join(parts))
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint; parameter shapes must match the stored config."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')!r}")
    try:
        cfg = DenoiserConfig.from_dict(header["model"])
        vocab = Vocabulary.from_tokens(header["vocab"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid model record: {exc}") from exc

    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        n = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")

    expected = param_shapes(cfg)
    params = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {tensors[name].shape}, config expects {shape}")
        params[name] = tensors.pop(name)
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(f"{path}: vocabulary size {len(vocab)} != config vocab_size {cfg.vocab_size}")
    meta = {k: v for k, v in header.items() if k not in ("format_version", "model", "vocab")}
    return Checkpoint(cfg, vocab, params, meta, tensors)
