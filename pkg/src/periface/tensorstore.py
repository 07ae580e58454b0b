"""Named-tensor container used for toy weights, checkpoints and latent archives.

File layout (all integers little-endian):

    bytes 0..7    magic ``b"NTWC0001"``
    bytes 8..15   uint64 header length ``n``
    bytes 16..16+n  UTF-8 JSON header
    remainder     concatenated raw tensor data, C order, little-endian

The JSON header has two keys: ``"meta"``, a flat string/number mapping for
things like step counters and config hashes, and ``"tensors"``, mapping each
tensor name to ``{"dtype", "shape", "offset", "nbytes"}`` with offsets
relative to the start of the data section.  Tensors are laid out in sorted
name order and the header is serialized with sorted keys, so writing the
same tensors twice produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Mapping

import numpy as np

from .errors import IOFailureError

MAGIC = b"NTWC0001"

_ALLOWED_DTYPES = {
    "float16",
    "float32",
    "float64",
    "int8",
    "int16",
    "int32",
    "int64",
    "uint8",
    "bool",
}


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    """Write ``tensors`` (name -> ndarray) plus optional ``meta`` to ``path``.

    The write is atomic: data goes to a temp file in the same directory
    which is then renamed over the target.
    """
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.name not in _ALLOWED_DTYPES:
            raise IOFailureError(f"unsupported dtype {arr.dtype.name!r} for tensor {name!r}")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes(order="C")
        entries[name] = {
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)

    header = json.dumps(
        {"meta": dict(meta or {}), "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    ).encode("utf-8")

    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            for raw in chunks:
                fh.write(raw)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IOFailureError(f"cannot write tensor archive {path}: {exc}") from exc


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive written by :func:`save_tensors`.

    Returns ``(tensors, meta)``; tensor arrays are fresh, writable copies.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IOFailureError(f"cannot read tensor archive {path}: {exc}") from exc

    if blob[:8] != MAGIC:
        raise IOFailureError(f"{path} is not a named-tensor archive (bad magic)")
    header_len = int.from_bytes(blob[8:16], "little")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IOFailureError(f"{path} has a corrupt header: {exc}") from exc

    data = blob[16 + header_len :]
    tensors = {}
    for name, entry in header["tensors"].items():
        dtype = entry["dtype"]
        if dtype not in _ALLOWED_DTYPES:
            raise IOFailureError(f"{path}: tensor {name!r} has unsupported dtype {dtype!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = data[start : start + nbytes]
        if len(raw) != nbytes:
            raise IOFailureError(f"{path}: tensor {name!r} is truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(dtype)).reshape(entry["shape"]).copy()
        tensors[name] = arr
    return tensors, header.get("meta", {})


def save_module_state(path, module, meta: Mapping | None = None) -> None:
    """Serialize a torch module's ``state_dict`` into an archive."""
    state = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    save_tensors(path, state, meta=meta)


def load_module_state(path, module) -> dict:
    """Load an archive into a torch module in place; returns the meta dict."""
    import torch

    tensors, meta = load_tensors(path)
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    module.load_state_dict(state)
    return meta


def state_digest(module) -> str:
    """sha256 of a module's parameters and buffers.

    Uses the same canonical encoding as the archive format (sorted names,
    C-order little-endian payload), so equal digests mean byte-identical
    saved archives.
    """
    h = hashlib.sha256()
    state = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        h.update(name.encode("utf-8"))
        h.update(arr.dtype.name.encode("ascii"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(arr.tobytes(order="C"))
    return h.hexdigest()
