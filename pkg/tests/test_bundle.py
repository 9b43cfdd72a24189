"""Container format: round-trips, alignment, and malformed-stream errors."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alfa import bundle as bundlefmt
from alfa.bundle import (
    ALIGNMENT,
    MAGIC,
    VERSION,
    BadMagicError,
    BundleError,
    DuplicateNameError,
    LayoutError,
    MetaError,
    TruncatedError,
    UnsupportedVersionError,
    read_bundle,
    read_bundle_bytes,
    write_bundle,
)

META = {"kind": "text", "embed_dim": 4}


def _craft(meta, tensors, version=VERSION, magic=MAGIC, payload_pad=0):
    """Build a raw stream with explicit records, bypassing write_bundle."""
    records, payload, offset = [], bytearray(), 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dtype = "f32" if arr.dtype.kind == "f" else "u8"
        blob = arr.astype("<f4" if dtype == "f32" else "u1").tobytes()
        offset = (offset + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT
        payload.extend(b"\0" * (offset - len(payload)))
        payload.extend(blob)
        records.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "byte_len": len(blob)})
        offset += len(blob)
    header = json.dumps({"version": version, "meta": {str(k): str(v) for k, v in meta.items()},
                         "tensors": records}).encode()
    return (magic + struct.pack("<I", version) + struct.pack("<Q", len(header))
            + header + bytes(payload) + b"\0" * payload_pad)


def test_empty_tensor_list_round_trips(tmp_path):
    path = tmp_path / "empty.alfb"
    write_bundle(path, META, {})
    b = read_bundle(path)
    assert b.names == []
    assert b.meta["kind"] == "text"


def test_single_f32_tensor_round_trips_exactly(tmp_path):
    path = tmp_path / "one.alfb"
    arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    write_bundle(path, META, {"t": arr})
    out = read_bundle(path)["t"]
    assert out.dtype == np.dtype("<f4")
    assert out.shape == (2, 2)
    assert out.tobytes() == arr.tobytes()


def test_second_record_offset_is_aligned(tmp_path):
    # two 4-byte tensors: the second must start at offset 8, not 4
    path = tmp_path / "two.alfb"
    write_bundle(path, META, {"a": np.zeros(1, dtype=np.float32),
                              "b": np.ones(1, dtype=np.float32)})
    recs = {r.name: r for r in read_bundle(path).header.tensors}
    assert recs["a"].offset == 0
    assert recs["b"].offset == 8


def test_write_is_deterministic(tmp_path):
    tensors = {"x": np.arange(7, dtype=np.float32),
               "m": np.array([0, 1, 1], dtype=np.uint8)}
    p1, p2 = tmp_path / "a.alfb", tmp_path / "b.alfb"
    write_bundle(p1, META, tensors)
    write_bundle(p2, META, tensors)
    assert p1.read_bytes() == p2.read_bytes()


def test_bool_coerced_to_u8(tmp_path):
    path = tmp_path / "mask.alfb"
    write_bundle(path, META, {"mask": np.array([[True, False]])})
    out = read_bundle(path)["mask"]
    assert out.dtype == np.dtype("u1")
    assert out.tolist() == [[1, 0]]


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(LayoutError):
        write_bundle(tmp_path / "x.alfb", META, {"t": np.arange(3, dtype=np.int64)})


def test_bad_magic():
    data = _craft(META, {"t": np.zeros(2, dtype=np.float32)}, magic=b"XXXX")
    with pytest.raises(BadMagicError):
        read_bundle_bytes(data)


def test_unsupported_version():
    data = _craft(META, {}, version=2)
    with pytest.raises(UnsupportedVersionError):
        read_bundle_bytes(data)


def test_truncated_payload():
    data = _craft(META, {"t": np.zeros(8, dtype=np.float32)})
    with pytest.raises(TruncatedError):
        read_bundle_bytes(data[:-8])


def test_tiny_file_is_truncation_error():
    with pytest.raises(TruncatedError):
        read_bundle_bytes(b"ALFB\x01")


def test_overlapping_records_rejected():
    data = _craft(META, {"a": np.zeros(4, dtype=np.float32)})
    raw = json.loads(data[16:16 + struct.unpack_from("<Q", data, 8)[0]])
    raw["tensors"].append({"name": "b", "dtype": "f32", "shape": [2],
                           "offset": 8, "byte_len": 8})
    header = json.dumps(raw).encode()
    stream = (MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header))
              + header + data[16 + struct.unpack_from("<Q", data, 8)[0]:])
    with pytest.raises(LayoutError):
        read_bundle_bytes(stream)


def test_duplicate_names_rejected():
    data = _craft(META, {"a": np.zeros(2, dtype=np.float32)})
    hlen = struct.unpack_from("<Q", data, 8)[0]
    raw = json.loads(data[16:16 + hlen])
    raw["tensors"].append(dict(raw["tensors"][0], offset=8))
    header = json.dumps(raw).encode()
    stream = (MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header))
              + header + data[16 + hlen:] + b"\0" * 16)
    with pytest.raises(DuplicateNameError):
        read_bundle_bytes(stream)


def test_misaligned_offset_rejected():
    data = _craft(META, {"a": np.zeros(2, dtype=np.float32)})
    hlen = struct.unpack_from("<Q", data, 8)[0]
    raw = json.loads(data[16:16 + hlen])
    raw["tensors"][0]["offset"] = 4
    header = json.dumps(raw).encode()
    stream = (MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header))
              + header + data[16 + hlen:] + b"\0" * 8)
    with pytest.raises(LayoutError):
        read_bundle_bytes(stream)


def test_byte_len_mismatch_rejected():
    data = _craft(META, {"a": np.zeros(2, dtype=np.float32)})
    hlen = struct.unpack_from("<Q", data, 8)[0]
    raw = json.loads(data[16:16 + hlen])
    raw["tensors"][0]["byte_len"] = 4
    header = json.dumps(raw).encode()
    stream = (MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header))
              + header + data[16 + hlen:])
    with pytest.raises(LayoutError):
        read_bundle_bytes(stream)


def test_missing_kind_rejected(tmp_path):
    with pytest.raises(MetaError):
        write_bundle(tmp_path / "x.alfb", {"embed_dim": 4}, {})


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(MetaError):
        write_bundle(tmp_path / "x.alfb", {"kind": "mystery"}, {})


def test_image_bundle_requires_geometry_meta(tmp_path):
    with pytest.raises(MetaError):
        write_bundle(tmp_path / "x.alfb", {"kind": "image", "embed_dim": 4}, {})


def test_malformed_json_header_is_typed_error():
    header = b"{not json"
    stream = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header)) + header
    with pytest.raises(BundleError):
        read_bundle_bytes(stream)


@st.composite
def tensor_dicts(draw):
    n = draw(st.integers(0, 4))
    out = {}
    for i in range(n):
        shape = tuple(draw(st.lists(st.integers(0, 5), min_size=1, max_size=3)))
        if draw(st.booleans()):
            arr = np.asarray(draw(st.lists(
                st.floats(-1e6, 1e6, allow_nan=False, width=32),
                min_size=int(np.prod(shape)), max_size=int(np.prod(shape)))),
                dtype=np.float32).reshape(shape)
        else:
            arr = np.asarray(draw(st.lists(
                st.integers(0, 255), min_size=int(np.prod(shape)),
                max_size=int(np.prod(shape)))), dtype=np.uint8).reshape(shape)
        out[f"t{i}"] = arr
    return out


@settings(deadline=None, max_examples=50)
@given(tensors=tensor_dicts())
def test_round_trip_property(tmp_path_factory, tensors):
    path = tmp_path_factory.mktemp("prop") / "b.alfb"
    write_bundle(path, META, tensors)
    b = read_bundle(path)
    assert b.names == list(tensors)
    for name, arr in tensors.items():
        got = b[name]
        assert got.shape == arr.shape
        assert got.tobytes() == np.ascontiguousarray(arr).tobytes()
