"""Portable binary checkpoints of a whole workflow state.

Layout (all integers little-endian)::

    b"EVORL1" | u32 version | u32 len + workflow id (utf-8) | u32 segment count
    segment := u32 len + name (utf-8) | u8 dtype (0 = f64, 1 = i64) | u8 ndim
               | ndim x u64 shape | payload (8 bytes per element)

Segment names are ``/``-joined paths into the state tree (dataclass fields,
dict keys, list indices). Strings and ``None`` are not stored: loading fills
a template state built from the same configuration, so only numbers travel.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EVORL1"
VERSION = 1
F64, I64 = 0, 1


class CheckpointError(ValueError):
    """The file is not a compatible, complete checkpoint."""


def _leaves(obj, prefix: str, out: list):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            _leaves(getattr(obj, f.name), f"{prefix}{f.name}/", out)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            if not isinstance(k, str) or "/" in k:
                raise TypeError(f"checkpoint dict keys must be strings without '/': {k!r} at {prefix}")
            _leaves(v, f"{prefix}{k}/", out)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _leaves(v, f"{prefix}{i}/", out)
    elif obj is None or isinstance(obj, str):
        return
    elif isinstance(obj, (bool, int, float, np.generic, np.ndarray)):
        out.append((prefix.rstrip("/"), np.asarray(obj)))
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__} at {prefix}")


def _encode(arr: np.ndarray) -> tuple[int, bytes]:
    if arr.dtype.kind == "f":
        return F64, np.ascontiguousarray(arr, dtype="<f8").tobytes()
    if arr.dtype.kind == "u":
        return I64, np.ascontiguousarray(arr.astype(np.uint64).view(np.int64), dtype="<i8").tobytes()
    if arr.dtype.kind in "ib":
        return I64, np.ascontiguousarray(arr, dtype="<i8").tobytes()
    raise TypeError(f"unsupported dtype {arr.dtype}")


def dumps(state, workflow_id: str) -> bytes:
    leaves: list = []
    _leaves(state, "", leaves)
    buf = io.BytesIO()
    wid = workflow_id.encode()
    buf.write(MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(wid)) + wid)
    buf.write(struct.pack("<I", len(leaves)))
    for name, arr in leaves:
        code, payload = _encode(arr)
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)) + nb + struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(payload)
    return buf.getvalue()


def checkpoint_save(state, path, workflow_id: str) -> Path:
    """Write atomically (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(state, workflow_id))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_segments(data: bytes, workflow_id: str | None = None) -> tuple[str, dict]:
    """Validate the header and return ``(workflow id, {name: array})``."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an erlkit checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (wlen,) = r.unpack("<I")
    wid = r.take(wlen).decode()
    if workflow_id is not None and wid != workflow_id:
        raise CheckpointError(f"checkpoint is for workflow {wid!r}, not {workflow_id!r}")
    (count,) = r.unpack("<I")
    segments = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if code not in (F64, I64):
            raise CheckpointError(f"segment {name}: unknown dtype code {code}")
        arr = np.frombuffer(r.take(8 * n), dtype="<f8" if code == F64 else "<i8").reshape(shape)
        segments[name] = arr.astype(np.float64 if code == F64 else np.int64)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last segment")
    return wid, segments


def _tree(segments: dict) -> dict:
    root: dict = {}
    for name, arr in segments.items():
        node = root
        parts = name.split("/")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = arr
    return root


_MISSING = object()


def _restore(template, sub, path: str):
    if dataclasses.is_dataclass(template) and not isinstance(template, type):
        sub = sub if isinstance(sub, dict) else {}
        kwargs = {}
        for f in dataclasses.fields(template):
            kwargs[f.name] = _restore(getattr(template, f.name), sub.get(f.name, _MISSING), f"{path}{f.name}/")
        return type(template)(**kwargs)
    if isinstance(template, dict):
        sub = sub if isinstance(sub, dict) else {}
        out = {}
        for k, v in template.items():
            out[k] = _restore(v, sub.get(k, _MISSING), f"{path}{k}/")
        for k, v in sub.items():
            if k not in out:
                out[k] = _restore(None, v, f"{path}{k}/") if not isinstance(v, dict) else _restore({}, v, f"{path}{k}/")
        return out
    if isinstance(template, (list, tuple)):
        sub = sub if isinstance(sub, dict) else {}
        items = [_restore(v, sub.get(str(i), _MISSING), f"{path}{i}/") for i, v in enumerate(template)]
        return type(template)(items)
    if template is None or isinstance(template, str):
        if template is None and isinstance(sub, np.ndarray):
            return sub.copy()
        return template
    if sub is _MISSING or isinstance(sub, dict):
        raise CheckpointError(f"checkpoint lacks {path.rstrip('/')}")
    arr = sub
    if isinstance(template, np.ndarray):
        if template.dtype.kind == "u":
            return arr.astype(np.int64).view(np.uint64).copy()
        return arr.astype(template.dtype)
    if isinstance(template, bool):
        return bool(arr)
    if isinstance(template, (int, np.integer)):
        return int(arr)
    return float(arr)


def loads(data: bytes, template, workflow_id: str | None = None):
    _, segments = read_segments(data, workflow_id)
    return _restore(template, _tree(segments), "")


def checkpoint_load(path, template, workflow_id: str | None = None):
    """Rebuild a state shaped like ``template`` from ``path``; nothing partial is returned."""
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err.strerror}") from err
    return loads(data, template, workflow_id)
