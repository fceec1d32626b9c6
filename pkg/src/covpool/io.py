"""Binary tensor files, checkpoints, and atomic writes.

TensorFile layout: 4-byte magic "CVPF", u32-LE version, u32-LE header length,
UTF-8 JSON header {"dtype": "f32"|"f64", "shape": [...], "order": "row-major"},
then the raw little-endian payload. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"CVPF"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

# Parameters at or below this many payload bytes are inlined into checkpoint
# JSON as nested arrays; larger ones go to sidecar TensorFiles.
INLINE_LIMIT_BYTES = 1024


class TensorFileError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def tensor_bytes(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    shape = a.shape  # before ascontiguousarray, which promotes 0-d to 1-d
    a = np.ascontiguousarray(a)
    if a.dtype not in _DTYPE_NAMES:
        raise ValueError(f"unsupported dtype {a.dtype}; use float32 or float64")
    name = _DTYPE_NAMES[a.dtype]
    header = json.dumps(
        {"dtype": name, "shape": list(shape), "order": "row-major"},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    payload = a.astype(_DTYPES[name], copy=False).tobytes(order="C")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload


def write_tensor(path: str | Path, a: np.ndarray) -> None:
    atomic_write_bytes(path, tensor_bytes(a))


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 12:
        raise TensorFileError("file too short for TensorFile preamble", len(data))
    if data[:4] != MAGIC:
        raise TensorFileError(f"bad magic {data[:4]!r}", 0)
    version, header_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}", 4)
    if len(data) < 12 + header_len:
        raise TensorFileError("truncated header", 12)
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"unreadable header: {exc}", 12) from exc
    if header.get("order") != "row-major":
        raise TensorFileError(f"unsupported order {header.get('order')!r}", 12)
    dtype = _DTYPES.get(header.get("dtype"))
    if dtype is None:
        raise TensorFileError(f"unsupported dtype {header.get('dtype')!r}", 12)
    shape = tuple(int(s) for s in header.get("shape", []))
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
    start = 12 + header_len
    if len(data) - start != expected:
        raise TensorFileError(
            f"payload length {len(data) - start} does not match shape {shape}", start
        )
    return np.frombuffer(data[start:], dtype=dtype).reshape(shape).copy()


def read_tensor(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def save_checkpoint(
    path: str | Path,
    net_cfg: dict,
    params: dict[str, np.ndarray],
    epoch: int,
    rng_state: dict,
) -> None:
    """Checkpoint JSON with small parameters inline and large ones as sidecar
    TensorFiles next to the checkpoint file."""
    path = Path(path)
    entries: dict[str, dict] = {}
    for name, value in params.items():
        value = np.asarray(value)
        if value.nbytes <= INLINE_LIMIT_BYTES:
            entries[name] = {
                "storage": "inline",
                "dtype": _DTYPE_NAMES[value.dtype],
                "shape": list(value.shape),
                "values": value.tolist(),
            }
        else:
            sidecar = f"{path.name}.{name}.cvpf"
            write_tensor(path.parent / sidecar, value)
            entries[name] = {
                "storage": "sidecar",
                "dtype": _DTYPE_NAMES[value.dtype],
                "shape": list(value.shape),
                "file": sidecar,
            }
    doc = {
        "format_version": 1,
        "net_cfg": net_cfg,
        "epoch": epoch,
        "params": entries,
        "rng_state": rng_state,
    }
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text())
    params: dict[str, np.ndarray] = {}
    for name, entry in doc["params"].items():
        dtype = _DTYPES[entry["dtype"]]
        if entry["storage"] == "inline":
            params[name] = np.asarray(entry["values"], dtype=dtype).reshape(entry["shape"])
        else:
            params[name] = read_tensor(path.parent / entry["file"])
    doc["params"] = params
    return doc
