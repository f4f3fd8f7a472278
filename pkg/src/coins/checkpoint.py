"""Binary checkpoint container: "COIN" magic, u16 version, typed little-endian sections.

Layout (all integers little-endian):

    magic      4 bytes  b"COIN"
    version    u16
    n_sections u32
    section*   kind u8 | name_len u16 | name utf-8 | payload_len u64 | payload

Section kinds: 1 = array (dtype code u8, ndim u8, shape u64 * ndim, raw bytes),
2 = text (utf-8, JSON for structured metadata).
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"COIN"
VERSION = 1
KIND_ARRAY = 1
KIND_TEXT = 2

DTYPES = {1: "<f4", 2: "<f8", 3: "<i1", 4: "<i2", 5: "<i4", 6: "<i8", 7: "|u1", 8: "|b1", 9: "<u2", 10: "<u4"}
CODES = {np.dtype(v).str: k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


def _array_payload(a: np.ndarray):
    a = np.asarray(a)  # ascontiguousarray would promote 0-d arrays to 1-d
    if not a.flags.c_contiguous:
        a = a.copy(order="C")
    if a.dtype.byteorder == ">":
        a = a.astype(a.dtype.newbyteorder("<"))
    code = CODES.get(a.dtype.str)
    if code is None:
        raise CheckpointError(f"unsupported dtype {a.dtype}")
    head = struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes()


def _parse_array(buf):
    if len(buf) < 2:
        raise CheckpointError("truncated array section")
    code, ndim = struct.unpack_from("<BB", buf, 0)
    if code not in DTYPES:
        raise CheckpointError(f"unknown dtype code {code}")
    off = 2 + 8 * ndim
    if len(buf) < off:
        raise CheckpointError("truncated array header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 2)
    dt = np.dtype(DTYPES[code])
    n = int(np.prod(shape)) if ndim else 1
    if len(buf) - off != n * dt.itemsize:
        raise CheckpointError("array payload size mismatch")
    return np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).copy()


def dumps(artifact: dict) -> bytes:
    """Serialize a flat dict of name -> ndarray | JSON-able value."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(artifact))]
    for name, value in artifact.items():
        nb = name.encode("utf-8")
        if isinstance(value, np.ndarray):
            kind, payload = KIND_ARRAY, _array_payload(value)
        else:
            kind, payload = KIND_TEXT, json.dumps(value, sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<BH", kind, len(nb)) + nb + struct.pack("<Q", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def loads(data: bytes) -> dict:
    if len(data) < 10:
        raise CheckpointError("truncated file")
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a COIN checkpoint")
    version, n = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    off = 10
    out = {}
    for _ in range(n):
        if off + 3 > len(data):
            raise CheckpointError("truncated section header")
        kind, name_len = struct.unpack_from("<BH", data, off)
        off += 3
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        if off + 8 > len(data):
            raise CheckpointError("truncated section header")
        (size,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + size > len(data):
            raise CheckpointError(f"truncated payload in section {name!r}")
        payload = data[off:off + size]
        off += size
        if kind == KIND_ARRAY:
            out[name] = _parse_array(payload)
        elif kind == KIND_TEXT:
            out[name] = json.loads(payload.decode("utf-8"))
        else:
            raise CheckpointError(f"unknown section kind {kind}")
    if off != len(data):
        raise CheckpointError("trailing bytes after last section")
    return out


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, artifact: dict):
    atomic_write(path, dumps(artifact))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        return loads(f.read())


# ------------------------------------------------------------------ object packing
def pack_predictor(model, prefix):
    out = {f"{prefix}/meta": {"input_dim": model.input_dim, "output_dim": model.output_dim,
                              "hidden": model.hidden, "n_models": model.n_models,
                              "min_variance": model.min_variance, "n_params": len(model.params)},
           f"{prefix}/skip": model.skip, f"{prefix}/skip_bias": model.skip_bias}
    for i, p in enumerate(model.params):
        out[f"{prefix}/p{i}"] = p
    return out


def unpack_predictor(art, prefix):
    from .dyn_models import GaussianPredictor
    m = art[f"{prefix}/meta"]
    params = [art[f"{prefix}/p{i}"] for i in range(m["n_params"])]
    return GaussianPredictor(m["input_dim"], m["output_dim"], m["hidden"], m["n_models"], m["min_variance"],
                             art[f"{prefix}/skip"], art[f"{prefix}/skip_bias"], params=params)


def pack_qnet(q, prefix):
    out = {f"{prefix}/meta": {"input_dim": q.input_dim, "action_count": q.action_count, "hidden": q.hidden,
                              "n_params": len(q.params)}}
    for i, p in enumerate(q.params):
        out[f"{prefix}/p{i}"] = p
    return out


def unpack_qnet(art, prefix):
    from .rl import QNetwork
    m = art[f"{prefix}/meta"]
    return QNetwork(m["input_dim"], m["action_count"], m["hidden"],
                    params=[art[f"{prefix}/p{i}"] for i in range(m["n_params"])])


def pack_trace(trace, prefix):
    """Float features go out as packed float32 records; flags and ids keep compact integer types."""
    out = {f"{prefix}/meta": {"n_blocks": trace.n_blocks, "n": len(trace)}}
    if trace.block_pos is not None:
        out[f"{prefix}/block_pos"] = np.asarray(trace.block_pos, dtype=np.float32)
    for k, v in trace.arrays().items():
        out[f"{prefix}/{k}"] = np.ascontiguousarray(v)
    return out


def unpack_trace(art, prefix):
    from .data import ARRAYS, Trace
    m = art[f"{prefix}/meta"]
    arrays = {k: art[f"{prefix}/{k}"] for k in ARRAYS}
    return Trace.from_arrays(arrays, m["n_blocks"], art.get(f"{prefix}/block_pos"))


def save_predictor(path, model):
    save_checkpoint(path, pack_predictor(model, "model"))


def load_predictor(path):
    return unpack_predictor(load_checkpoint(path), "model")
