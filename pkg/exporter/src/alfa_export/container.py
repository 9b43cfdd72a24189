"""Writer for the .alfb tensor container consumed by the engine.

The exporter talks to the engine only through files, so this is an
independent implementation of the container's write side: magic ``ALFB``,
little-endian u32 version, u64 header length, a canonical JSON header
(sorted keys, compact separators), then the payload with every tensor
8-byte aligned.
"""

import json
import struct

import numpy as np

MAGIC = b"ALFB"
VERSION = 1
ALIGNMENT = 8
EXTENSION = ".alfb"


class ContainerError(Exception):
    pass


def _coerce(name: str, arr) -> tuple[str, np.ndarray]:
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        return "u8", arr
    if arr.dtype.kind in "fiub":
        return "f32", np.ascontiguousarray(arr, dtype="<f4")
    raise ContainerError(f"{name}: unsupported dtype {arr.dtype}")


def write_bundle(path, meta: dict, tensors: dict[str, np.ndarray] | None = None) -> None:
    """Serialize named tensors plus stringified meta to ``path``."""
    tensors = tensors or {}
    meta = {str(k): str(v) for k, v in meta.items()}

    records = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        dtype, arr = _coerce(name, arr)
        offset += -offset % ALIGNMENT
        blob = np.ascontiguousarray(arr).tobytes()
        records.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "byte_len": len(blob)})
        blobs.append((offset, blob))
        offset += len(blob)

    header = json.dumps({"version": VERSION, "meta": meta, "tensors": records},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = bytearray(offset)
    for off, blob in blobs:
        payload[off:off + len(blob)] = blob

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)
