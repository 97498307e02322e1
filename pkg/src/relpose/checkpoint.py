"""Versioned binary checkpoints: config text plus named float32 blocks.

Layout (little-endian): magic "RPSTCKPT", u32 version, u32 config length,
config text (the same `key = value` format as config files), the named
parameter blocks, the named buffer blocks (BN running statistics), and an
optional optimizer-state section.  Loading rebuilds the model from the
embedded config and validates every block's shape against it, so
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import ModelConfig, parse_config, serialize_config
from .pipeline import PoseTransferNet

MAGIC = b"RPSTCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or inconsistent with its config."""


def _write_array(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint: missing {what}")
    return data


def _read_array(f, what: str) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(f, 4, f"{what} name length"))
    name = _read_exact(f, name_len, f"{what} name").decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(f, 4, f"{name} rank"))
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"{name} shape"))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    raw = _read_exact(f, 4 * count, f"{name} data")
    return name, np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def save(path, model: PoseTransferNet, include_optimizer: bool = False) -> None:
    params = model.named_parameters()
    buffers = model.buffers()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        config_text = serialize_config(model.config).encode("utf-8")
        f.write(struct.pack("<I", len(config_text)))
        f.write(config_text)
        f.write(struct.pack("<I", len(params)))
        for p in params:
            _write_array(f, p.name, p.tensor.data)
        f.write(struct.pack("<I", len(buffers)))
        for name, arr in buffers:
            _write_array(f, name, arr)
        f.write(struct.pack("<B", 1 if include_optimizer else 0))
        if include_optimizer:
            for p in params:
                _write_array(f, f"{p.name}.m", p.m)
                _write_array(f, f"{p.name}.v", p.v)
                f.write(struct.pack("<I", p.step))


def load(path) -> PoseTransferNet:
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config = parse_config(_read_exact(f, config_len, "config").decode("utf-8"))
        model = PoseTransferNet(config)

        by_name = {p.name: p for p in model.named_parameters()}
        (n_params,) = struct.unpack("<I", _read_exact(f, 4, "parameter count"))
        if n_params != len(by_name):
            raise CheckpointError(
                f"checkpoint has {n_params} parameters, model expects {len(by_name)}")
        for _ in range(n_params):
            name, arr = _read_array(f, "parameter")
            param = by_name.get(name)
            if param is None:
                raise CheckpointError(f"unknown parameter '{name}'")
            if param.tensor.data.shape != arr.shape:
                raise CheckpointError(
                    f"parameter '{name}' shape {arr.shape} does not match "
                    f"config-built shape {param.tensor.data.shape}")
            param.tensor.data = arr

        buffer_map = dict(model.buffers())
        (n_buffers,) = struct.unpack("<I", _read_exact(f, 4, "buffer count"))
        if n_buffers != len(buffer_map):
            raise CheckpointError(
                f"checkpoint has {n_buffers} buffers, model expects {len(buffer_map)}")
        for _ in range(n_buffers):
            name, arr = _read_array(f, "buffer")
            target = buffer_map.get(name)
            if target is None:
                raise CheckpointError(f"unknown buffer '{name}'")
            if target.shape != arr.shape:
                raise CheckpointError(f"buffer '{name}' shape {arr.shape} mismatch")
            target[...] = arr

        (has_opt,) = struct.unpack("<B", _read_exact(f, 1, "optimizer flag"))
        if has_opt:
            for p in model.named_parameters():
                name_m, m = _read_array(f, "optimizer moment")
                name_v, v = _read_array(f, "optimizer moment")
                if name_m != f"{p.name}.m" or name_v != f"{p.name}.v":
                    raise CheckpointError(f"optimizer state out of order at '{p.name}'")
                if m.shape != p.m.shape or v.shape != p.v.shape:
                    raise CheckpointError(f"optimizer state shape mismatch at '{p.name}'")
                p.m, p.v = m, v
                (p.step,) = struct.unpack("<I", _read_exact(f, 4, "optimizer step"))
        trailing = f.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after checkpoint data")
    return model
