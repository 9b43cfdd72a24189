"""Binary tensor container (.alfb) shared by the exporter and the engine.

Layout: bytes 0-3 magic "ALFB", bytes 4-7 version (u32 LE), bytes 8-15
header length (u64 LE), then a UTF-8 JSON header of exactly that length,
then the payload region.  Tensor offsets are relative to the payload start
and are always divisible by 8; gaps are zero-filled.  Tensors are
little-endian, row-major, dtype f32 or u8.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"ALFB"
VERSION = 1
ALIGNMENT = 8
EXTENSION = ".alfb"

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_KINDS = ("image", "text", "bank", "map")

# meta keys required for kind=image bundles
_IMAGE_META_KEYS = ("grid_h", "grid_w", "scales", "image_h", "image_w", "source_path")


class BundleError(Exception):
    """Base class for container format errors."""


class BadMagicError(BundleError):
    pass


class UnsupportedVersionError(BundleError):
    pass


class TruncatedError(BundleError):
    pass


class LayoutError(BundleError):
    """Overlapping, misaligned, or inconsistent tensor records."""


class DuplicateNameError(BundleError):
    pass


class MetaError(BundleError):
    pass


@dataclass(frozen=True)
class TensorRecord:
    name: str
    dtype: str
    shape: tuple[int, ...]
    offset: int
    byte_len: int

    def expected_bytes(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n * _DTYPES[self.dtype].itemsize


@dataclass
class BundleHeader:
    meta: dict[str, str]
    tensors: list[TensorRecord] = field(default_factory=list)
    version: int = VERSION


def _validate_header(header: BundleHeader, payload_len: int | None = None) -> None:
    if header.version != VERSION:
        raise UnsupportedVersionError(f"unsupported bundle version {header.version}")
    kind = header.meta.get("kind")
    if kind is None:
        raise MetaError("meta missing required key 'kind'")
    if kind not in _KINDS:
        raise MetaError(f"unknown bundle kind {kind!r}")
    if kind in ("image", "text", "bank"):
        try:
            d = int(header.meta["embed_dim"])
        except (KeyError, ValueError):
            raise MetaError("meta['embed_dim'] missing or not an integer") from None
        if d <= 0:
            raise MetaError(f"embed_dim must be positive, got {d}")
    if kind == "image":
        for key in _IMAGE_META_KEYS:
            if key not in header.meta:
                raise MetaError(f"image bundle meta missing {key!r}")

    seen: set[str] = set()
    spans: list[tuple[int, int, str]] = []
    for rec in header.tensors:
        if rec.name in seen:
            raise DuplicateNameError(f"duplicate tensor name {rec.name!r}")
        seen.add(rec.name)
        if rec.dtype not in _DTYPES:
            raise LayoutError(f"{rec.name}: unknown dtype {rec.dtype!r}")
        if any(s < 0 for s in rec.shape):
            raise LayoutError(f"{rec.name}: negative dimension in shape {rec.shape}")
        if rec.byte_len != rec.expected_bytes():
            raise LayoutError(
                f"{rec.name}: byte_len {rec.byte_len} != shape/dtype product "
                f"{rec.expected_bytes()}"
            )
        if rec.offset < 0 or rec.offset % ALIGNMENT:
            raise LayoutError(f"{rec.name}: offset {rec.offset} not {ALIGNMENT}-aligned")
        if payload_len is not None and rec.offset + rec.byte_len > payload_len:
            raise TruncatedError(
                f"{rec.name}: record ends at {rec.offset + rec.byte_len}, "
                f"payload is {payload_len} bytes"
            )
        spans.append((rec.offset, rec.offset + rec.byte_len, rec.name))
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise LayoutError(f"records {name_a!r} and {name_b!r} overlap")


def _align(n: int) -> int:
    return (n + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def _coerce(name: str, arr: np.ndarray) -> tuple[str, np.ndarray]:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        return "f32", np.ascontiguousarray(arr, dtype="<f4")
    if arr.dtype == np.uint8 or arr.dtype == bool:
        return "u8", np.ascontiguousarray(arr, dtype="u1")
    raise LayoutError(f"{name}: unsupported dtype {arr.dtype}; use float32 or uint8")


def write_bundle(path, meta: dict, tensors: dict[str, np.ndarray] | None = None) -> None:
    """Serialize named tensors plus string meta to ``path``.

    Tensor records are laid out in insertion order, each payload 8-byte
    aligned.  Meta values are stringified.
    """
    tensors = tensors or {}
    meta = {str(k): str(v) for k, v in meta.items()}

    records = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        dtype, arr = _coerce(name, arr)
        offset = _align(offset)
        blob = arr.tobytes()
        records.append(
            TensorRecord(name=name, dtype=dtype, shape=tuple(arr.shape),
                         offset=offset, byte_len=len(blob))
        )
        blobs.append((offset, blob))
        offset += len(blob)

    header = BundleHeader(meta=meta, tensors=records)
    _validate_header(header)

    header_json = json.dumps(
        {
            "version": VERSION,
            "meta": meta,
            "tensors": [
                {"name": r.name, "dtype": r.dtype, "shape": list(r.shape),
                 "offset": r.offset, "byte_len": r.byte_len}
                for r in records
            ],
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    payload = bytearray(offset)
    for off, blob in blobs:
        payload[off:off + len(blob)] = blob

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_json)))
        fh.write(header_json)
        fh.write(payload)


class Bundle:
    """A parsed bundle: header plus tensor access by name."""

    def __init__(self, header: BundleHeader, payload: bytes):
        self.header = header
        self._payload = payload
        self._by_name = {rec.name: rec for rec in header.tensors}

    @property
    def meta(self) -> dict[str, str]:
        return self.header.meta

    @property
    def names(self) -> list[str]:
        return [rec.name for rec in self.header.tensors]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            rec = self._by_name[name]
        except KeyError:
            raise KeyError(f"no tensor named {name!r} in bundle") from None
        raw = self._payload[rec.offset:rec.offset + rec.byte_len]
        arr = np.frombuffer(raw, dtype=_DTYPES[rec.dtype]).reshape(rec.shape)
        arr.flags.writeable = False
        return arr


def read_bundle(path) -> Bundle:
    """Parse a bundle file, validating every header invariant first."""
    with open(path, "rb") as fh:
        data = fh.read()
    return read_bundle_bytes(data)


def read_bundle_bytes(data: bytes) -> Bundle:
    if len(data) < 16:
        raise TruncatedError(f"file is {len(data)} bytes; need at least 16")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported bundle version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    if 16 + header_len > len(data):
        raise TruncatedError("header extends past end of file")
    try:
        raw = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"malformed JSON header: {exc}") from exc

    try:
        records = [
            TensorRecord(name=t["name"], dtype=t["dtype"], shape=tuple(t["shape"]),
                         offset=t["offset"], byte_len=t["byte_len"])
            for t in raw.get("tensors", [])
        ]
        header = BundleHeader(meta=dict(raw["meta"]), tensors=records,
                              version=raw.get("version", -1))
    except (KeyError, TypeError) as exc:
        raise BundleError(f"malformed header structure: {exc}") from exc

    payload = data[16 + header_len:]
    _validate_header(header, payload_len=len(payload))
    return Bundle(header, payload)
