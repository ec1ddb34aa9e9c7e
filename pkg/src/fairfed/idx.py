"""Reader and writer for the IDX binary array format.

An IDX record is a 4-byte magic ``00 00 TT ND`` (TT = element type code,
ND = number of dimensions), ND big-endian uint32 sizes, then the elements
in big-endian row-major order.  MNIST ships its images as ubyte 3-D
records (magic ``0x00000803``) and labels as ubyte 1-D records
(``0x00000801``).
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

TYPE_CODES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_CODE_FOR_KIND = {
    np.dtype("uint8"): 0x08,
    np.dtype("int8"): 0x09,
    np.dtype("int16"): 0x0B,
    np.dtype("int32"): 0x0C,
    np.dtype("float32"): 0x0D,
    np.dtype("float64"): 0x0E,
}

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def read_bytes(path) -> bytes:
    """File contents, transparently gunzipped when the gzip magic is present."""
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})") from None
    return data


def parse_record(buf: bytes, offset: int = 0, *, source="<bytes>"):
    """Decode one record starting at ``offset``.

    Returns ``(magic, array, next_offset)``.
    """
    if len(buf) - offset < 4:
        raise FormatError(f"{source}: truncated header at byte {offset}")
    zero, code, ndim = struct.unpack_from(">HBB", buf, offset)
    magic = (code << 8) | ndim
    if zero != 0 or code not in TYPE_CODES or ndim == 0:
        raise FormatError(f"{source}: bad magic 0x{(zero << 16) | magic:08x} at byte {offset}")
    offset += 4
    if len(buf) - offset < 4 * ndim:
        raise FormatError(f"{source}: truncated dimension table")
    shape = struct.unpack_from(f">{ndim}I", buf, offset)
    offset += 4 * ndim
    dtype = TYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - offset < nbytes:
        raise FormatError(
            f"{source}: truncated body, need {nbytes} bytes, have {len(buf) - offset}")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
    arr = arr.reshape(shape).astype(dtype.newbyteorder("="))
    return magic, arr, offset + nbytes


def encode_record(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = _CODE_FOR_KIND.get(arr.dtype)
    if code is None:
        raise FormatError(f"no IDX element type for dtype {arr.dtype}")
    if arr.ndim == 0 or arr.ndim > 255:
        raise FormatError("IDX records need 1 to 255 dimensions")
    header = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=TYPE_CODES[code]).tobytes()


def read_records(path) -> list[np.ndarray]:
    """All records stored back to back in ``path``."""
    buf = read_bytes(path)
    out = []
    offset = 0
    while offset < len(buf):
        _, arr, offset = parse_record(buf, offset, source=str(path))
        out.append(arr)
    return out


def write_records(path, arrays) -> None:
    Path(path).write_bytes(b"".join(encode_record(a) for a in arrays))


def load_mnist_arrays(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(images uint8 (n, rows, cols), labels uint8 (n,))`` from an IDX pair."""
    ibuf = read_bytes(images_path)
    lbuf = read_bytes(labels_path)
    magic, images, end = parse_record(ibuf, source=str(images_path))
    if magic != IMAGES_MAGIC:
        raise FormatError(f"{images_path}: expected magic 0x{IMAGES_MAGIC:08x}, got 0x{magic:08x}")
    if end != len(ibuf):
        raise FormatError(f"{images_path}: {len(ibuf) - end} trailing bytes")
    magic, labels, end = parse_record(lbuf, source=str(labels_path))
    if magic != LABELS_MAGIC:
        raise FormatError(f"{labels_path}: expected magic 0x{LABELS_MAGIC:08x}, got 0x{magic:08x}")
    if end != len(lbuf):
        raise FormatError(f"{labels_path}: {len(lbuf) - end} trailing bytes")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images, labels
