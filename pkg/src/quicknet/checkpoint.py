"""Binary parameter checkpoints.

Layout, all integers little-endian:

    magic "QNET" | version u32 | block count u32
    then one record per parameter, in the model's canonical order:
    name length u32 | UTF-8 name | dtype tag u8 (1=f32, 2=f64) |
    rank u8 | extents u64 each | values, little-endian

The same record serialization drives the per-block digests used to prove
frozen blocks stayed untouched, so a digest mismatch means the bytes that
would hit disk actually changed.
"""

import hashlib
import struct

import numpy as np

from .errors import DataError

MAGIC = b"QNET"
VERSION = 1
_TAG_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_DTYPE_FOR = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class CheckpointError(DataError):
    """Checkpoint file is malformed."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint does not describe the given model."""


def _param_record(name, param):
    dtype = np.dtype(param.data.dtype)
    if dtype not in _TAG_FOR:
        raise CheckpointError(f"parameter {name!r} has unsupported dtype {dtype}")
    tag = _TAG_FOR[dtype]
    encoded = name.encode("utf-8")
    head = struct.pack("<I", len(encoded)) + encoded + struct.pack("<BB", tag, param.data.ndim)
    head += struct.pack(f"<{param.data.ndim}Q", *param.data.shape)
    values = np.ascontiguousarray(param.data, dtype=_DTYPE_FOR[tag]).tobytes()
    return head + values


def save_checkpoint(path, net):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(net.blocks)))
        for name, param in net.named_params():
            fh.write(_param_record(name, param))


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: expected {n} bytes of {what}")
    return buf


def read_records(path):
    """Header info and raw (name, array) pairs without needing a model."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        version, n_blocks = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        records = []
        while True:
            raw = fh.read(4)
            if not raw:
                break
            if len(raw) != 4:
                raise CheckpointError("truncated checkpoint: partial record header")
            (name_len,) = struct.unpack("<I", raw)
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            tag, rank = struct.unpack("<BB", _read_exact(fh, 2, "dtype/rank"))
            if tag not in _DTYPE_FOR:
                raise CheckpointError(f"parameter {name!r}: unknown dtype tag {tag}")
            shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "extents"))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            dtype = _DTYPE_FOR[tag]
            values = _read_exact(fh, count * dtype.itemsize, f"values of {name!r}")
            records.append((name, np.frombuffer(values, dtype=dtype).reshape(shape)))
    return n_blocks, records


def load_checkpoint(path, net):
    """Fill a freshly built model's parameters from a checkpoint.

    Every parameter must match by name and shape, no extras in either
    direction. Loaded models are inference-ready, so all blocks come back
    frozen.
    """
    n_blocks, records = read_records(path)
    if n_blocks != len(net.blocks):
        raise CheckpointMismatchError(
            f"checkpoint has {n_blocks} blocks, model has {len(net.blocks)}"
        )
    params = dict(net.named_params())
    seen = set()
    for name, values in records:
        if name not in params:
            raise CheckpointMismatchError(f"checkpoint parameter {name!r} not in model")
        if name in seen:
            raise CheckpointError(f"duplicate parameter {name!r} in checkpoint")
        seen.add(name)
        param = params[name]
        if tuple(values.shape) != tuple(param.data.shape):
            raise CheckpointMismatchError(
                f"parameter {name!r}: checkpoint shape {values.shape}, model shape {param.data.shape}"
            )
        param.data = values.astype(param.data.dtype, copy=True)
    missing = set(params) - seen
    if missing:
        raise CheckpointMismatchError(f"checkpoint missing parameters: {sorted(missing)}")
    for i in range(len(net.blocks)):
        net.freeze_block(i)
    return net


def block_digest(net, i):
    """SHA-256 over block i's parameter records, exactly as they would serialize."""
    h = hashlib.sha256()
    for p in net.blocks[i].params():
        h.update(_param_record(p.name, p))
    return h.hexdigest()


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
