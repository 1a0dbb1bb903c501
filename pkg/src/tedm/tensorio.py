"""On-disk tensor formats.

Checkpoint archive: the magic string ``TEDMCKPT`` and a schema version
head the file, followed by a text manifest (meta key/value lines, then
one line per tensor with its name, shape and byte offset), an ``end``
line, and the concatenated little-endian float32 payload::

    TEDMCKPT
    version 1
    meta <key> <value>
    tensor <name> <d0,d1,...|-> <offset>
    end
    <raw float32 data>

Latent container: magic ``TEDMLATZ``, a little-endian u16 format version,
then per-tensor records: step id (u32), dim count (u32), dims (u32 each),
raw little-endian float32 payload.

Tensors are written in sorted name order (checkpoints) or given record
order (latents) so identical content produces identical bytes.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError, StorageError

CKPT_MAGIC = b"TEDMCKPT"
CKPT_VERSION = 1
LATENT_MAGIC = b"TEDMLATZ"
LATENT_VERSION = 1


def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def save_checkpoint(
    path: str, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None
) -> None:
    for name in tensors:
        if not name or any(c.isspace() for c in name):
            raise FormatError(f"bad tensor name {name!r}")
    header = [CKPT_MAGIC.decode() + "\n", f"version {CKPT_VERSION}\n"]
    for key in sorted(meta or {}):
        if any(c.isspace() for c in key):
            raise FormatError(f"bad meta key {key!r}")
        value = str((meta or {})[key])
        if "\n" in value:
            raise FormatError(f"meta value for {key!r} contains newline")
        header.append(f"meta {key} {value}\n")
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        dims = ",".join(str(d) for d in arr.shape) if arr.ndim else "-"
        header.append(f"tensor {name} {dims} {len(payload)}\n")
        payload.extend(arr.tobytes())
    header.append("end\n")
    _atomic_write(path, "".join(header).encode() + bytes(payload))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    if not blob.startswith(CKPT_MAGIC + b"\n"):
        raise FormatError(f"{path}: bad magic")
    end_marker = blob.find(b"\nend\n")
    if end_marker < 0:
        raise FormatError(f"{path}: missing end-of-manifest marker")
    manifest = blob[: end_marker + 1].decode()
    payload = blob[end_marker + len(b"\nend\n") :]
    lines = manifest.splitlines()
    if len(lines) < 2 or lines[1] != f"version {CKPT_VERSION}":
        raise FormatError(f"{path}: unsupported schema version")
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    for line in lines[2:]:
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "tensor":
            name, dims, offset = rest.rsplit(" ", 2)
            shape = () if dims == "-" else tuple(int(d) for d in dims.split(","))
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            start = int(offset)
            raw = payload[start : start + 4 * count]
            if len(raw) != 4 * count:
                raise FormatError(f"{path}: truncated payload for tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        else:
            raise FormatError(f"{path}: unknown manifest line {line!r}")
    return tensors, meta


def save_latents_file(path: str, records: list[tuple[int, np.ndarray]]) -> None:
    out = bytearray(LATENT_MAGIC)
    out.extend(struct.pack("<H", LATENT_VERSION))
    for step, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out.extend(struct.pack("<II", int(step), arr.ndim))
        out.extend(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.extend(arr.tobytes())
    _atomic_write(path, bytes(out))


def load_latents_file(path: str) -> list[tuple[int, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    if blob[:8] != LATENT_MAGIC:
        raise FormatError(f"{path}: bad magic")
    if len(blob) < 10:
        raise FormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<H", blob, 8)
    if version != LATENT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    pos = 10
    records: list[tuple[int, np.ndarray]] = []
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise FormatError(f"{path}: truncated record header")
        step, ndim = struct.unpack_from("<II", blob, pos)
        pos += 8
        if pos + 4 * ndim > len(blob):
            raise FormatError(f"{path}: truncated dims")
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if pos + 4 * count > len(blob):
            raise FormatError(f"{path}: truncated payload")
        arr = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
            .reshape(shape)
            .copy()
        )
        pos += 4 * count
        records.append((int(step), arr))
    return records
