"""Binary checkpoint files.

Layout (all integers little-endian):

    magic   4 bytes  b"SATN"
    version u32      currently 1
    meta    u32 length + UTF-8 JSON (config, epoch, adam step counter)
    count   u32      number of tensors
    manifest, per tensor:
        u16 name length + UTF-8 name
        u32 rank, then u32 per dimension
    data    raw float64 little-endian values per tensor, manifest order

The tensor table holds every model weight plus the Adam moment estimates
(``adam.m.<name>``, ``adam.v.<name>``). Floats round-trip bitwise, so
``load(save(x))`` reproduces x exactly.
"""

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, UsageError
from .model import ModelParams
from .training import AdamState, TrainConfig

MAGIC = b"SATN"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config: dict
    tensors: dict  # name -> float64 ndarray
    epoch: int
    adam_step: int

    @property
    def mode(self):
        return self.config.get("mode")


def build_checkpoint(params: ModelParams, moments: AdamState,
                     config: TrainConfig, epoch: int) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in params.items()}
    for name, arr in moments.m.items():
        tensors[f"adam.m.{name}"] = arr.copy()
    for name, arr in moments.v.items():
        tensors[f"adam.v.{name}"] = arr.copy()
    return Checkpoint(version=VERSION, config=config.as_dict(),
                      tensors=tensors, epoch=epoch, adam_step=moments.t)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    meta = json.dumps({"config": ckpt.config, "epoch": ckpt.epoch,
                       "adam_step": ckpt.adam_step},
                      sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    names = list(ckpt.tensors)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        shape = ckpt.tensors[name].shape
        buf.write(struct.pack("<I", len(shape)))
        for dim in shape:
            buf.write(struct.pack("<I", dim))
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype=np.float64)
        buf.write(arr.astype("<f8", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise DataFormatError("not a crowdattn checkpoint (bad magic)")
        version = struct.unpack("<I", _read(fh, 4, "version"))[0]
        if version != VERSION:
            raise DataFormatError(
                f"unsupported checkpoint version {version}, expected {VERSION}")
        meta_len = struct.unpack("<I", _read(fh, 4, "meta length"))[0]
        try:
            meta = json.loads(_read(fh, meta_len, "meta").decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise DataFormatError(f"corrupt checkpoint metadata: {exc}") from None
        count = struct.unpack("<I", _read(fh, 4, "tensor count"))[0]
        manifest = []
        for _ in range(count):
            name_len = struct.unpack("<H", _read(fh, 2, "tensor name"))[0]
            name = _read(fh, name_len, "tensor name").decode("utf-8")
            rank = struct.unpack("<I", _read(fh, 4, "tensor rank"))[0]
            shape = tuple(struct.unpack("<I", _read(fh, 4, "tensor dims"))[0]
                          for _ in range(rank))
            manifest.append((name, shape))
        tensors = {}
        for name, shape in manifest:
            n = int(np.prod(shape)) if shape else 1
            raw = _read(fh, 8 * n, f"tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return Checkpoint(version=version, config=meta.get("config", {}),
                      tensors=tensors, epoch=meta.get("epoch", 0),
                      adam_step=meta.get("adam_step", 0))


def restore_model(ckpt: Checkpoint, expected_mode=None):
    """Rebuild (params, moments) from a checkpoint, verifying the mode."""
    mode = ckpt.mode
    if expected_mode is not None and mode != expected_mode:
        raise UsageError(
            f"mode mismatch: checkpoint was trained in mode {mode!r} but "
            f"{expected_mode!r} was requested")
    weights = {}
    for name, arr in ckpt.tensors.items():
        if not name.startswith("adam."):
            weights[name] = arr
    try:
        params = ModelParams.from_arrays(weights)
    except UsageError as exc:
        raise DataFormatError(f"invalid checkpoint: {exc}") from None
    moments = AdamState(params)
    moments.t = ckpt.adam_step
    for name in moments.m:
        m_name, v_name = f"adam.m.{name}", f"adam.v.{name}"
        if m_name not in ckpt.tensors or v_name not in ckpt.tensors:
            raise DataFormatError(f"checkpoint missing moments for {name}")
        moments.m[name] = ckpt.tensors[m_name].copy()
        moments.v[name] = ckpt.tensors[v_name].copy()
    extra = set(ckpt.tensors) - set(weights) \
        - {f"adam.m.{n}" for n in moments.m} \
        - {f"adam.v.{n}" for n in moments.v}
    if extra:
        raise DataFormatError(f"unknown tensor names in checkpoint: "
                              f"{sorted(extra)}")
    return params, moments
